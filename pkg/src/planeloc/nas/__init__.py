"""Search spaces, samplers, genotypes and the agent Q network."""
from .cnn import (SHARED_LAYOUT, UNIQUE_LAYOUT, Cell, CellBackbone, MixedEdge, PlainBackbone, ShapeMismatchError,
                  op_execution_counts, reset_op_counts)
from .genotype import (RNN_KIND, EmptyHistoryError, Genotype, cnn_edges, derive_genotype, load_alpha, rnn_edges,
                       save_alpha, select_architecture)
from .ops import CNN_OPS, RNN_OPS
from .qnet import QNetwork, build_qnetwork
from .rnn import Calibrator, RecurrentCell
from .sampling import ArchitectureParams, darts_mix, gdas_sample, gumbel_noise
