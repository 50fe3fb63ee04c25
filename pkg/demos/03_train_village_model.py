"""Train MM-V on the coarse corpus from demo 02 and export its third conv
layer as the transfer donor. Takes about a minute on one CPU core."""
import os
import tempfile

from missmarple.model import build_mmv
from missmarple.nn.weights import save_weights
from missmarple.patches import load_corpus
from missmarple.training import Hyper, epoch_log_line, run_trial, select_donor, trial_report

out = os.path.join(tempfile.gettempdir(), "missmarple_demo")
corpus = load_corpus(os.path.join(out, "coarse_corpus"))

# one seeded iteration of up to 10 epochs; the full protocol is 100 x 30
hyper = Hyper(epochs=10, n_iterations=1)
trial = run_trial(lambda seed: build_mmv(seed=seed), corpus, hyper,
                  log=lambda run, rec: print(epoch_log_line(run, rec)))
print(trial_report(trial, "MM-V", "coarse"))

donor = select_donor(trial, "V_conv2d_3", os.path.join(out, "donor.mmwt"))
print("donor kernel", donor["V_conv2d_3/kernel"].shape)
save_weights(trial.best_run.weights, os.path.join(out, "mmv_coarse.mmwt"))
