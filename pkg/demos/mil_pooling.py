"""
Pooling a bag
=============

A bag of instances is encoded, pooled into one vector and classified.
The five pooling rules differ only in how instances are weighted.
"""

import numpy as np

from topomil.milcore import AGGREGATORS, EncoderConfig, MILModel, ModelConfig

rng = np.random.default_rng(1)
bag = rng.standard_normal((6, 4))
negatives = rng.standard_normal((50, 4))

for kind in AGGREGATORS:
    model = MILModel(ModelConfig(EncoderConfig([4, 8, 3], ["relu", "none"]), kind, attention_hidden=16), seed=0)
    if kind == "anomaly":
        model.fit_gaussian(negatives)  # Mahalanobis scores need a fitted negative Gaussian
    out = model.forward(bag)
    weights = np.round(out.instance_weights, 3) if out.instance_weights.size else "-"
    # anomaly starts as attention: its distance weight is initialised to 0
    print(f"{kind:9s} p(positive)={model.predict_proba([bag])[0, 1]:.3f} weights={weights}")

###############################################################################
# Pooling does not care about instance order.

model = MILModel(ModelConfig(EncoderConfig([4, 3], ["tanh"]), "attention", attention_hidden=8))
perm = rng.permutation(len(bag))
print(np.allclose(model.forward(bag).zeta.data, model.forward(bag[perm]).zeta.data))
