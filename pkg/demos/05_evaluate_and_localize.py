"""Image-level verdicts, the metric table and a bounding box on a fine
splice, using the MM-V-A weights from demo 04."""
import os
import tempfile

from PIL import Image

from missmarple.evaluate import (best_threshold, compute_metrics, evaluate_images, metrics_report,
                                 predict_windows, verdict_from_map)
from missmarple.localize import bounding_box, iou, mask_box, render_overlay
from missmarple.model import build_mmva
from missmarple.nn.weights import load_weights
from missmarple.patches import load_corpus, load_image
from missmarple.synth import SynthConfig, generate_pair

out = os.path.join(tempfile.gettempdir(), "missmarple_demo")
corpus = load_corpus(os.path.join(out, "fine_corpus"))
net = build_mmva(donor_weights=load_weights(os.path.join(out, "donor.mmwt")))
load_weights(os.path.join(out, "mmva_fine.mmwt"), network=net)

# %% pick T on the non-test images, then score the held-out ones
test = sorted(corpus.test_images)
fit = [i for i in range(len(corpus.sources)) if i not in test]
fractions = [verdict_from_map(predict_windows(net, load_image(corpus.sources[i])), 0).fraction for i in fit]
T = best_threshold(fractions, [corpus.labels[i] for i in fit], [0.0, 0.02, 0.05, 0.1, 0.2])
report, verdicts = evaluate_images(net, [load_image(corpus.sources[i]) for i in test],
                                   [corpus.labels[i] for i in test], T, ids=test)
for v in verdicts:
    print(f"image {v.image_id}: {v.n_fake}/{v.n_patches} windows fake -> {v.label}")
print(metrics_report([("MM-V-A", "fine", 1, report, None)]))

# the published row for comparison of the formulas
print(metrics_report([("MM-V", "C1", 67, compute_metrics(35, 32, 5, 1, 0.05), None)]))

# %% localisation on a fresh fine splice with a rectangular donor
_, spliced, mask = generate_pair(SynthConfig(regime="fine", shapes=("rect",), seed=1000), 0)
box = bounding_box(predict_windows(net, spliced))
truth = mask_box(mask)
print("predicted", box and box.as_tuple(), "truth", truth.as_tuple(),
      "IoU %.2f" % (iou(box, truth) if box else 0.0))
annotated = render_overlay(spliced, box)
Image.fromarray(annotated).save(os.path.join(out, "localized_demo.png"))
