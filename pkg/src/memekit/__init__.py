"""memekit: match memes to base templates, split datasets without template
leakage, and classify by nearest-template majority labels."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    EmbeddingMatrix,
    MemeRecord,
    TaskMeta,
    TemplateRecord,
    load_dataset,
    load_embeddings,
    load_kb,
    load_task,
    save_embeddings,
)
from .evaluation import F1Report, f1_report  # noqa: F401
from .fusion import fuse  # noqa: F401
from .index import Index, build_index, euclidean_distance, query_knn  # noqa: F401
from .thresholds import (  # noqa: F401
    GlobalThreshold,
    ThresholdProfile,
    build_profiles,
    classify_item,
    global_threshold,
    template_threshold,
)
from .tlc import TlcModel, tlc_fit, tlc_predict, tlc_predict_late_fusion  # noqa: F401
from .tsplit import (  # noqa: F401
    ObjectId,
    SplitPlan,
    assign_objects,
    tsplit_downsample_by_template,
    tsplit_downsample_mode,
    tsplit_full_mode,
)
