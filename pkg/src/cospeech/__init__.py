"""Two-stage co-speech gesture synthesis: an audio-conditioned diffusion
generator for rhythm, a script-conditioned autoencoder for semantics, and the
evaluation metrics (FGD, beat consistency, diversity) to score them."""

from .audio import AudioClip, clip_audio_span, clip_sample_count, load_wav, resample_audio, write_wav
from .diffusion import (
    DdimPlan,
    NoiseSchedule,
    ddim_sample,
    ddim_step,
    make_ddim_plan,
    make_schedule,
    q_sample,
    sdedit_empower,
    x0_to_eps,
)
from .errors import ConfigError, CospeechError, DataError
from .metrics import (
    AeConfig,
    MetricReport,
    beat_consistency,
    detect_audio_beats,
    detect_motion_beats,
    diversity,
    evaluate,
    fgd,
    frechet_distance,
    train_feature_autoencoder,
)
from .motion import (
    ClipWindow,
    JointLayout,
    PoseSequence,
    chain_layout,
    read_pose,
    resample_fps,
    split_clips,
    stitch_clips,
    write_pose,
)
from .rhythm import RhythmConfig, generate_batch, generate_clip, generate_long, rag_loss, train_rag
from .semantic import (
    CodebookProvider,
    FileProvider,
    SemanticConfig,
    generate_from_text,
    prompt_edit,
    sag_loss,
    train_sag,
)
from .synthdata import SpeechSample, SynthConfig, make_corpus, motif_recover, read_corpus, render_long_audio, write_corpus

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "clip_audio_span", "clip_sample_count", "load_wav",
    "resample_audio", "write_wav",
    "DdimPlan", "NoiseSchedule", "ddim_sample", "ddim_step", "make_ddim_plan",
    "make_schedule", "q_sample", "sdedit_empower", "x0_to_eps",
    "ConfigError", "CospeechError", "DataError",
    "AeConfig", "MetricReport", "beat_consistency", "detect_audio_beats",
    "detect_motion_beats", "diversity", "evaluate", "fgd", "frechet_distance",
    "train_feature_autoencoder",
    "ClipWindow", "JointLayout", "PoseSequence", "chain_layout", "read_pose",
    "resample_fps", "split_clips", "stitch_clips", "write_pose",
    "RhythmConfig", "generate_batch", "generate_clip", "generate_long",
    "rag_loss", "train_rag",
    "CodebookProvider", "FileProvider", "SemanticConfig", "generate_from_text",
    "prompt_edit", "sag_loss", "train_sag",
    "SpeechSample", "SynthConfig", "make_corpus", "motif_recover",
    "read_corpus", "render_long_audio", "write_corpus",
    "__version__",
]
