# Degrading a dense mask into the three imperfect-label regimes.
#
# Starts from a synthetic ground-truth mask and produces point labels,
# scribbles, and a calibrated noisy mask, printing the supervision budget
# and measured quality of each. All three keep ignore_index (255) at
# every pixel they do not claim to know.

import os

from segprobe import (
    class_palette,
    mask_quality,
    random_class_mask,
    save_mask,
    synth_noisy,
    synth_points,
    synth_scribble,
)

out_dir = os.path.join("demo_out", "labels")
os.makedirs(out_dir, exist_ok=True)

gt = random_class_mask(160, 160, num_classes=4, seed=5)
total = gt.labeled_count
print(f"ground truth: {total} labeled pixels, classes {gt.classes_present()}")

palette = class_palette()
save_mask(gt, os.path.join(out_dir, "gt.png"), palette=palette)

# points: k pixels per class, uniform over that class's support
points = synth_points(gt, k_per_class=10, seed=0)
print(f"points    : {points.labeled_count:5d} labeled "
      f"({100 * points.labeled_count / total:5.2f}% of gt), "
      f"quality vs gt {mask_quality(points, gt):6.2f} mIoU%")

# scribbles: one stroke along each connected component's long axis
scribble = synth_scribble(gt, thickness=3, length_frac=0.5, seed=0)
print(f"scribbles : {scribble.labeled_count:5d} labeled "
      f"({100 * scribble.labeled_count / total:5.2f}% of gt), "
      f"quality vs gt {mask_quality(scribble, gt):6.2f} mIoU%")

# noisy: dense but wrong, corrupted until it measures ~70 mIoU against gt
noisy = synth_noisy(gt, target_miou_pct=70.0, seed=0)
print(f"noisy-70  : {noisy.labeled_count:5d} labeled "
      f"(dense), quality vs gt {mask_quality(noisy, gt):6.2f} mIoU%")

save_mask(points, os.path.join(out_dir, "points.png"), palette=palette)
save_mask(scribble, os.path.join(out_dir, "scribble.png"), palette=palette)
save_mask(noisy, os.path.join(out_dir, "noisy70.png"), palette=palette)
print(f"wrote masks to {out_dir}")

# The quality number for sparse regimes reads low because unlabeled pixels
# count as misses; it measures how much supervision survives, not whether
# the surviving pixels are right (they always are, by construction).
