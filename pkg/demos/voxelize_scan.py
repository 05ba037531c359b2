# coding: utf-8

# # From a point cloud to a voxel grid
#
# The detector input is a dense 768 x 1024 x 21 grid over a 60 m x 80 m x 4 m
# region in front of the sensor. Each cell holds occupancy, mean intensity or
# a semantic class value in [1, 2].

# %%
import numpy as np

from semtrack import GridSpec, PointCloud, SemanticMap, paint_semantics, voxelize
from semtrack.voxelizer import project_to_image
from semtrack.kitti_io import default_calibration

spec = GridSpec()
print("dims", spec.dims, "cell size (m)", np.round(spec.cell_size, 4))

# %% [markdown]
# A toy scan: a flat road plus a box-shaped "car" 15 m ahead.

# %%
rng = np.random.default_rng(0)
road = np.column_stack([rng.uniform(0, 60, 20000), rng.uniform(-20, 20, 20000),
                        np.full(20000, -1.7), rng.uniform(0, 0.3, 20000)])
car = np.column_stack([rng.uniform(13, 17, 3000), rng.uniform(-1, 1, 3000),
                       rng.uniform(-1.7, -0.2, 3000), rng.uniform(0.5, 1.0, 3000)])
cloud = PointCloud(np.vstack([road, car]))
print(len(cloud), "points")

# %%
occ = voxelize(cloud, spec=spec, mode="occupancy")
inten = voxelize(cloud, spec=spec, mode="intensity")
print("occupied cells:", np.count_nonzero(occ.values))
print("intensity range:", inten.values[inten.values > 0].min(), inten.values.max())

# %% [markdown]
# ## Semantic painting
#
# Points are projected into a per-pixel class map with the camera
# calibration, and each cell keeps the majority class. Here the "image" says
# road everywhere (class 0) except for a car-shaped patch (class 13).

# %%
calib = default_calibration()
classes = np.zeros((375, 1242), dtype=np.int64)
uv, seen = project_to_image(PointCloud(car), calib, (1242, 375))
u0, v0 = np.floor(uv[seen].min(axis=0)).astype(int)
u1, v1 = np.ceil(uv[seen].max(axis=0)).astype(int)
classes[max(v0, 0):v1 + 1, max(u0, 0):u1 + 1] = 13
labels = paint_semantics(cloud, SemanticMap(classes), calib)
print("points outside the image:", int(np.sum(labels < 0)))

sem = voxelize(cloud, labels, spec, mode="semantic")
values = sem.values[sem.values > 0]
print("distinct cell values:", np.unique(np.round(values, 4)))

# %% [markdown]
# Grids serialize to a small binary format (SVXL): a 32-byte header followed
# by the float32 cells in C order.

# %%
blob = sem.to_bytes()
print(len(blob), "bytes;", blob[:4])
