"""Check hand-written backward passes with central finite differences."""
from recconv.selftest import run_gradchecks

for name, rep in run_gradchecks(seed=0).items():
    print(f"{name:<28} max rel err {rep.max_rel_err:.2e}  {'ok' if rep.passed else 'FAIL'}")
