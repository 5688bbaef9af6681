"""Project state-annotated phylogenetic trees into PCA space and measure jogging."""

from .core import (CharacterMatrix, StateAnnotatedTree, TimeTree, make_balanced_tree, make_skewed_tree,
                   read_matrix_csv, validate, write_matrix_csv)
from .ctmc import CtmcRates, ffbs_sample, ffbs_samples, fit_rates, node_marginals, prune_likelihood, transition_matrix
from .errors import (DegenerateModelError, EmptySimulationError, InputError, MissingStateError, NexusParseError,
                     NumericalError, TopologyMismatchError, TreejogError, ZeroLikelihoodError)
from .jog import (JogReport, ProjectedTree, clade_locations, count_patterns, jogging_score, kde_2d,
                  project_tree)
from .nexus import NexusTreeLog, merge_state_logs, parse_nexus, write_nexus
from .pca import PcaModel, explained_variance, fit, project
from .sim import BorrowScenario, DolloConfig, EventLog, effective_borrowed_fraction, simulate
from .viz import PlotSpec, render_kde, render_tree

__version__ = "0.1.0"
