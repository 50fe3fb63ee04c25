"""Generate a small coarse splice dataset, then cut it into a balanced
patch corpus."""
import os
import tempfile

import numpy as np

from missmarple.patches import build_corpus, extract_fake_patches, read_manifest, save_corpus
from missmarple.synth import SynthConfig, generate_dataset, generate_pair

out = os.path.join(tempfile.gettempdir(), "missmarple_demo")

# %% one triple: authentic image, spliced image, 0/255 mask
authentic, spliced, mask = generate_pair(SynthConfig(regime="coarse", seed=0), 0)
print("mask covers %.1f%% of the image" % (100 * np.mean(mask > 127)))
print("pixels changed:", int(np.any(authentic != spliced, axis=-1).sum()),
      "mask pixels:", int((mask > 127).sum()))

# fine regime: feathered edges and colour-matched donor
_, fine, fmask = generate_pair(SynthConfig(regime="fine", seed=0), 0)
inside = fmask > 127
print("fine donor mean:", fine[inside].mean(0).round(1), " whole image:", fine.mean((0, 1)).round(1))

# %% fake patches are the stride-aligned windows overlapping the mask by >= 40%
fakes = extract_fake_patches(spliced, mask, size=64, overlap_frac=0.40, stride=32)
print(len(fakes), "fake windows, e.g.", [(p.row, p.col) for p in fakes[:4]])

# %% whole datasets: 10 spliced + 10 authentic, written with a manifest
generate_dataset(SynthConfig(regime="coarse", seed=0), os.path.join(out, "coarse"))
generate_dataset(SynthConfig(regime="fine", seed=0), os.path.join(out, "fine"))
manifest = read_manifest(os.path.join(out, "coarse", "manifest.tsv"))
corpus = build_corpus(manifest, seed=0)
print(corpus.counts())
save_corpus(corpus, os.path.join(out, "coarse_corpus"))
save_corpus(build_corpus(read_manifest(os.path.join(out, "fine", "manifest.tsv")), seed=0),
            os.path.join(out, "fine_corpus"))
print("corpora written under", out)
