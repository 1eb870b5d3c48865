"""Group-deliberation engine.

A three-role reasoning pipeline (generate, verify, arbitrate) with
retrieval-backed evidence gating, a self-game diversity mechanism, and
a trainable Gaussian viewpoint-weight policy, plus a deterministic
synthetic backend that makes the whole loop reproducible offline.
"""

from .agents import (
    Conclusion,
    TaskInput,
    VerificationState,
    Viewpoint,
    arbitrate,
    extract_answer,
    generate_viewpoints,
    load_templates,
    make_task,
    verify_viewpoint,
)
from .backends import (
    Backend,
    BackendRequest,
    BackendResponse,
    EndpointConfig,
    HashEmbedder,
    HttpBackend,
    Role,
    SyntheticBackend,
)
from .benchmark import (
    Benchmark,
    SyntheticGraph,
    generate_benchmark,
    graph_from_knowledge_texts,
    write_benchmark,
)
from .config import AblationFlags, Config, config_from_dict, load_config, save_config
from .core_math import (
    GaussianPolicy,
    fact_score,
    frobenius_cosine,
    gaussian_entropy,
    gaussian_kl,
    gaussian_log_prob,
    softmax_with_temperature,
    squash_coherence,
)
from .errors import DeliberantError
from .orchestrator import (
    DeliberationEnvironment,
    EvalReport,
    TraceWriter,
    consistency_metric,
    deliberate,
    evaluate,
    load_tasks_jsonl,
    normalize_answer,
)
from .retrieval import (
    KnowledgeBase,
    KnowledgeItem,
    RetrievalResult,
    build,
    load_knowledge_jsonl,
    retrieval_distribution,
    retrieve_top_m,
    save_knowledge_jsonl,
)
from .selfgame import SelfGameConfig, estimate_gradient, run_selfgame, selfgame_objective
from .stub_server import OpenAIStubServer
from .training import (
    OracleEnvironment,
    PPOConfig,
    RewardBreakdown,
    Transition,
    composite_reward,
    compute_advantages,
    load_checkpoint,
    ppo_loss,
    ppo_loss_and_grad,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
