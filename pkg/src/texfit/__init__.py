"""Overfit compact neural networks to a single textured 3D mesh.

Submodules:
    mesh_io   -- OBJ/MTL ingestion, normalization, chart labeling
    surface   -- BVH-backed closest-point / signed-distance / UV oracle
    sampling  -- importance-sampled training sets with SDF/UV/chart targets
    nn        -- dense network engine with exact reverse-mode gradients
    models    -- the three overfit networks and their training loops
    render    -- sphere tracer with texture and normal mapping
    metrics   -- parameterization distortion and image fidelity metrics
    pruning   -- lottery-ticket pruning and sparse weight serialization
    fixture   -- procedural two-chart test asset
    cli       -- command-line pipeline driver
"""

__version__ = "0.1.0"
