"""
Per-channel statistics and the StatMix transform
================================================

Every image is summarised by six numbers: the mean and population standard
deviation of each colour channel. Re-statisticising an image swaps its six
numbers for someone else's while keeping its spatial structure.
"""

import numpy as np

from statmix import Image, compute_stats, statmix_batch
from statmix.imagecore import synthetic_dataset, write_ppm

ds = synthetic_dataset(per_class=4, num_classes=3, seed=0)
source, donor = ds[0], ds[5]

s = compute_stats(source)
print("source means", np.round(s.mean, 4), "stds", np.round(s.std, 4))
d = compute_stats(donor)
print("donor  means", np.round(d.mean, 4), "stds", np.round(d.std, 4))

# normalise by the image's own stats, rescale with the donor's
mixed = statmix_batch([source], d)[0]
m = compute_stats(mixed)
print("mixed  means", np.round(m.mean, 4), "stds", np.round(m.std, 4))
print("largest stat error:", max(abs(a - b) for a, b in zip(m.mean + m.std, d.mean + d.std)))

# values may leave [0, 1]; only the export clamps
print("pixel range after mixing: [%.3f, %.3f]" % (mixed.pixels.min(), mixed.pixels.max()))

# mixing with its own stats gives the image back
back = statmix_batch([source], s)[0]
print("self-mix max error:", np.abs(back.pixels - source.pixels).max())

# a constant channel has std 0; the sigma floor turns it into the donor's mean
flat = Image(np.full((32, 32, 3), 0.4), 0)
print("constant image mixed:", np.unique(statmix_batch([flat], d)[0].pixels[:, :, 0]))

# a grid of one source re-coloured with several donors, as PPM files
for j in range(1, 5):
    write_ppm(statmix_batch([source], compute_stats(ds[j]))[0], f"mixed_with_{j}.ppm")
write_ppm(source, "original.ppm")
print("wrote original.ppm and mixed_with_{1..4}.ppm")
