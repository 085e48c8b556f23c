"""
Few training bags
=================

Bags are drawn from the 8x8 digits bundled with scikit-learn; a bag is
positive when it holds at least one "9".  For each pooling rule we train
with and without the topological term on very few bags and compare F1 on
fresh test bags.
"""

from topomil import EncoderConfig, ModelConfig, TrainConfig
from topomil.datasets import load_digits_pool
from topomil.training import PoolSource, scarcity_sweep

x, y = load_digits_pool()
source = PoolSource(x, y, positive_label=9)

for kind, lr, lam in [("mean", 5e-3, 0.01), ("rgp", 5e-4, 0.01)]:
    base = TrainConfig(ModelConfig(EncoderConfig([64, 20, 50, 500], ["relu"] * 3), kind), lr=lr, epochs=100)
    result = scarcity_sweep(source, [10, 20], [(10, 2)], runs=3, base_config=base, lam=lam, test_bags=100)
    for cell in result.summary():
        print(f"{kind:5s} bags={cell['bag_count']:3d} {cell['model']:8s} "
              f"F1 {cell['f1_mean']:.3f} +- {cell['f1_std']:.3f}")
