"""hippasym: left/right shape asymmetry analysis for paired 3D structures.

Pipeline stages: binary mask -> marching-cubes surface -> spherical
parameterization -> spherical-harmonic descriptors -> per-side features ->
asymmetry vectors -> t-test selection -> linear SVM classification.
"""

__version__ = "0.1.0"
