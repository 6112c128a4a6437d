"""Train a small U-net with nested-block attention on synthetic phantoms.

A reduced run (32x32 images, a few epochs) so it finishes in about a minute.
The same steps are available from the command line:

    nbsa gen --out data
    nbsa train --set data_dir=data --out runs/train
    nbsa eval --set data_dir=data --set checkpoint=runs/train/model.ckpt --out runs/eval

Run: python3 demos/04_train_and_evaluate.py
"""

import numpy as np

from nbsa import backbone as Bk
from nbsa import evaluate, phantom
from nbsa.attention import AttentionConfig

spec = phantom.DatasetSpec(H=32, W=32)
train, test = phantom.make_dataset(42, 40, 12, spec)
print("test severities:", [s.severity for s in test])

for variant in ("none", "nbsa"):
    model = Bk.build(Bk.ModelConfig(H=32, W=32, attention=AttentionConfig(variant=variant, B=8, s=4)), seed=1)
    result = Bk.train(model, train, Bk.TrainConfig(lr=1e-3, epochs=6, seed=1))
    preds = [Bk.predict_mask(model, s.image) for s in test]
    rows, _ = evaluate.evaluate_samples(test, preds, 5)
    summary = evaluate.summarize(rows, {i: s.severity for i, s in enumerate(test)})
    losses = " ".join(f"{v:.3f}" for v in result.losses)
    print(f"{variant:>5}: {model.n_parameters} parameters, loss {losses}")
    print(f"       mean DSC {summary['dsc']['mean']:.3f}, per organ "
          + ", ".join(f"{k} {v['dsc']['mean']:.3f}" for k, v in summary["organs"].items()))

sample = test[0]
print("\nground truth of the first test image (labels 0-4):")
print("\n".join("".join(str(v) for v in row[::2]) for row in sample.mask[::2]))
print("pixel intensities span", np.round(sample.image.min(), 3), "to", np.round(sample.image.max(), 3))
