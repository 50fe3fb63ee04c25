"""MM-V-A: the fine-splice model with the frozen coarse-trained conv layer
concatenated into its stream. Trains MM-V alone on the fine data as the
baseline. Needs demos 02 and 03."""
import os
import tempfile

import numpy as np

from missmarple.model import build_mmv, build_mmva, junction_output, layer_counts
from missmarple.nn.weights import load_weights, save_weights
from missmarple.patches import arrays, load_corpus
from missmarple.training import Hyper, run_trial, trial_report

out = os.path.join(tempfile.gettempdir(), "missmarple_demo")
fine = load_corpus(os.path.join(out, "fine_corpus"))
donor = load_weights(os.path.join(out, "donor.mmwt"))

net = build_mmva(donor_weights=donor)
print(net.summary())
print("layer counts:", layer_counts(net))
x, _ = arrays(fine.val[:2])
print("junction output", junction_output(net, x).shape, "(64 transferred + 64 own channels)")

hyper = Hyper(epochs=10, n_iterations=1)
alone = run_trial(lambda s: build_mmv(seed=s), fine, hyper)
transfer = run_trial(lambda s: build_mmva(donor_weights=donor, seed=s), fine, hyper)
print(trial_report(alone, "MM-V", "fine"))
print(trial_report(transfer, "MM-V-A", "fine"))

kept = transfer.best_run.weights["V_conv2d_3/kernel"]
print("donor untouched by training:", np.array_equal(kept, donor["V_conv2d_3/kernel"]))
save_weights(transfer.best_run.weights, os.path.join(out, "mmva_fine.mmwt"))
