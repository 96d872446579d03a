# Toy end-to-end run: synthetic clips, stage-1 pretraining, tracking, metrics.
# Takes about half a minute on one core.

import numpy as np

from onetracker import TrackerConfig
from onetracker.data import gen_config_from, generate_dataset
from onetracker.metrics import format_table
from onetracker.training import evaluate_clips, pretrain_foundation

cfg = TrackerConfig.toy()
clips = generate_dataset(cfg.seed, 4, gen_config_from(cfg))
print(len(clips), "clips,", len(clips[0]), "frames of", clips[0].size, "px")
print(clips[0].text)

model, log = pretrain_foundation(cfg, clips, steps=300)
print("loss", round(log.losses[0], 3), "->", round(float(np.mean(log.losses[-10:])), 3))

report, results = evaluate_clips(model, clips, "rgb", cfg)
print(format_table(report))

# first clip, frame by frame
for t, (pred, gt) in enumerate(zip(results[0].boxes, clips[0].boxes)):
    print(t, np.round(pred, 1), gt)
