"""Gender-bias measurement for LSTM language models.

Pipeline: audit a corpus's pronoun balance, train CBOW embeddings,
hard-debias them, train LSTM language models under three embedding
regimes, and compare perplexity on stereotype-swap test sets.
"""

from .config import PipelineConfig, load_config, make_config
from .corpus import (EOS, EOS_ID, UNK, UNK_ID, PronounAudit, Vocabulary,
                     build_vocab, encode, pronoun_audit, read_corpus, tokenize)
from .debias import (GenderSubspace, WordSets, debias_all, equalize,
                     gender_direction, neutralize)
from .embeddings import (CbowConfig, EmbeddingMatrix, cosine, load_text,
                         nearest_neighbors, normalize_rows, save_text,
                         train_cbow, train_cbow_logged)
from .errors import (ConfigurationError, CorpusDecodeError,
                     DegenerateGeometryError, DivergenceError,
                     InsufficientDataError, LmbiasError, ParseError,
                     VocabularyMismatchError)
from .evalsuite import (BiasReport, SynthConfig, TestSet, WordListBundle,
                        balanced_eval, compare_models, evaluate_model,
                        format_increment, generate_testsets,
                        relative_increment, synth_corpus)
from .lm import (LanguageModel, LmConfig, TrainStats, forward, grad_check,
                 init_model, load_checkpoint, perplexity_corpus,
                 perplexity_sentence, save_checkpoint, sentence_nll, train)

__version__ = "0.1.0"
