"""From histogram matrices to a decision: temporal CNN features and the SVM.

Run:  python3 demos/03_cnn_and_svm.py

Story: a 1-D CNN convolves along time only, halving the 75 time steps down to
one while keeping all 768 histogram bins. The last convolution, averaged over
its 64 channels, is a 768-long feature per plane; XT and YT features are
concatenated and a linear SVM separates the classes.
"""

import numpy as np

from iipad.classify import concat_features, train_svm
from iipad.cnn1d import TrainConfig, extract_feature, init_network, train
from iipad.eval import ScoreSet, auc, eer
from iipad.pipeline import RunConfig, sequence_matrices
from iipad.synth import gen_sequence, subject_tone


def clips(subject, count):
    tone = subject_tone(np.random.default_rng([5, subject]))
    out = []
    for i in range(count):
        material = "skin_like" if i % 2 == 0 else "mask_like"
        seq, _ = gen_sequence(material, [5, subject, i], tone=tone)
        out.append((sequence_matrices(seq, RunConfig(intrinsic=False)), seq.label))
    return out


def main():
    net = init_network(0, plane="XT")
    print("layer output shapes (channels, time, bins):")
    for layer, shape in zip(net.layers, net.shapes[1:]):
        print(f"  {type(layer).__name__:<9} -> {shape}")
    print(f"time axis trace: {net.temporal_trace()}")

    print("\nrendering 12 training and 6 test clips (no decomposition, for speed) ...")
    train_set = clips(0, 6) + clips(1, 6)
    test_set = clips(2, 6)

    networks = {}
    for plane in ("XT", "YT"):
        data = [(m[plane], label) for m, label in train_set]
        result = train(init_network(1, plane=plane), data, TrainConfig(batch_size=4, epochs=3, seed=1))
        networks[plane] = result.network
        print(f"{plane}: train loss per epoch {[round(r.train_loss, 4) for r in result.history]}")

    def features(m):
        feats = [extract_feature(networks[p], m[p]) for p in ("XT", "YT")]
        return concat_features(feats, "XT,YT").values

    x = np.stack([features(m) for m, _ in train_set])
    svm = train_svm(x, [label for _, label in train_set])
    print(f"\nfeature length {x.shape[1]}; SVM duality gap {svm.gap:.1e} after {svm.passes} passes")

    scores = ScoreSet(np.array([svm.decision(features(m)) for m, _ in test_set]), tuple(l for _, l in test_set))
    value, tau = eer(scores)
    print(f"held-out subject: EER {value:.3f} at threshold {tau:.3f}, AUC {auc(scores):.3f}")
    for s, label in zip(scores.scores, scores.labels):
        print(f"  {label:<9} score {s:+.3f}")


if __name__ == "__main__":
    main()
