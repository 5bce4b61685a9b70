"""Four-stage desk-scale model: shape schedule and parameter budget."""
from recconv import DESK_CONFIG, build_model, complexity_report, count_params
from recconv.report import to_text
from recconv.rng import SplitMix64

model = build_model(DESK_CONFIG)
x = SplitMix64(7).uniform(3 * 224 * 224).reshape(1, 3, 224, 224)
y, ledger, _ = model.forward(x)
for name, shape in ledger:
    print(f"{name:>7}: {shape}")
print("parameters:", count_params(model))
print(to_text(complexity_report(model, (224, 224))))
print("smallest accepted input side:", model.min_input_side())
