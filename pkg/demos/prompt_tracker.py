# Stage 2 on top of a toy foundation: RGB is corrupted, thermal stays clean.
# Prompt parts start at zero so the tracker begins exactly where the foundation is.

import numpy as np

from onetracker import TrackerConfig, census_formula, trainable_param_count
from onetracker.data import gen_config_from, generate_dataset
from onetracker.peft import format_census
from onetracker.training import finetune_prompt, mean_tracking_iou, pretrain_foundation

cfg = TrackerConfig.toy()
foundation, _ = pretrain_foundation(cfg, generate_dataset(0, 8, gen_config_from(cfg)), steps=600)

hard = cfg.replace(task="rgb_t", rgb_corruption=1.0)
train = generate_dataset(1, 8, gen_config_from(hard))
test = generate_dataset(2, 16, gen_config_from(hard))
print("foundation, held out:", round(mean_tracking_iou(foundation, test, "rgb_t", hard), 3))

tracker, log = finetune_prompt(hard, foundation, train, steps=300)
print("prompt tracker, held out:", round(mean_tracking_iou(tracker, test, "rgb_t", hard), 3))
print(format_census(trainable_param_count(tracker)))

# how many parameters a full-size model would ship per modality
vit_b = TrackerConfig()
for mod in "NMDTE":
    print(mod, f"{census_formula(vit_b, mod)['trainable']:,}")
for k in (1, 2, 3, 6, 12):
    print("every", k, f"{census_formula(vit_b.replace(every_k=k), 'T')['trainable']:,}")
