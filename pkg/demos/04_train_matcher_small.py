"""Train a small matcher run and watch the loss fall.

This is a scaled-down version of the full recipe (fewer samples and
epochs) so it finishes in about a minute; the full configuration lives in
the pipeline defaults.
"""

import numpy as np

from semistereo import matchnet
from semistereo.synth import SyntheticSceneSpec, gen_synthetic
from semistereo.tensornet import TrainConfig, init_params, sgd_train
from semistereo.tensornet.network import predict_scores
from semistereo.transforms import TransformConfig

records = [gen_synthetic(SyntheticSceneSpec(seed=300 + i)) for i in range(4)]
cfg = TransformConfig()

train = matchnet.sample_matching_patches(records, cfg, per_class=400, rng=1)
test = matchnet.sample_matching_patches(records, cfg, per_class=150, rng=2)

params = init_params(matchnet.matching_net_spec(), matchnet.INPUT_SHAPE, seed=7)
trained, losses = sgd_train(
    params, train.samples, train.labels, TrainConfig(epochs=10, batch_size=16, seed=7)
)
print("epoch losses:", " ".join(f"{l:.3f}" for l in losses))

scores = predict_scores(trained, test.samples)
accuracy = np.mean((scores > 0.5) == (test.labels == 1))
print(f"patch classification accuracy on a fresh draw: {accuracy * 100:.1f}%")
