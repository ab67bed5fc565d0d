"""Electron-density-conditioned molecule generation at desk scale.

Pipeline: molecule -> structure factors -> truncated-Fourier density grid ->
labeled point cloud -> fragment-SMILES + discretized-geometry sequence ->
decoder-only model -> geometry-constrained generation -> similarity metrics.
"""

from .mol import (Atom, Bond, BondOrder, Molecule, PharmacophoreClass,
                  classify_pharmacophore, smallest_ring_sizes)
from .smiles import parse_smiles, write_smiles
from .sdf import read_sdf, write_sdf
from .density import (Cell, DensityGrid, FormFactorModel, LabeledPointCloud,
                      StructureFactorSet, build_cell, density_from_factors,
                      read_grid, sample_point_cloud, structure_factors, write_grid)
from .fsmiles import (AncestorIndices, FragmentDecomposition, TokenEvent, Vocab,
                      VOCAB, detokenize, fragment, tokenize, trace_ancestors)
from .geom import (DiscretizationParams, GeomRecord, ToleranceConfig,
                   discretize_coords, dequantize_coords, feasible_lattice_points,
                   reconstruct_position, relative_geometry)
from .model import ModelConfig, init_params, paper_config, toy_config
from .train import TrainConfig, load_checkpoint, save_checkpoint, train
from .generate import GenerationConfig, GenerationResult, generate, sample_categorical
from .metrics import Fingerprint, fingerprint, recovery_and_diversity, tanimoto

__version__ = "0.1.0"
