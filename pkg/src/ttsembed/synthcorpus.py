"""Parametric synthetic multi-speaker corpus.

Each speaker is a harmonic voice: a fundamental frequency, per-token
formant shifts, a spectral tilt, and a white-noise level. Each token type
renders as a fixed-duration harmonic complex with a token-specific spectral
envelope, so utterances carry both speaker identity and token content. The
generator also emits the ground-truth frame-level token alignment.
"""

from __future__ import annotations

import json
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureConfig, Waveform, frame_count

DEFAULT_TOKENS = ["sil", "aa", "ee", "ii", "oo", "uu", "kk", "ss", "tt", "nn", "mm", "rr"]

MALE_F0_RANGE = (90.0, 160.0)
FEMALE_F0_RANGE = (170.0, 280.0)


@dataclass
class SpeakerProfile:
    speaker_id: str
    gender: str                      # "M" or "F"
    f0: float                        # Hz
    formant_shifts: list             # one multiplicative shift per token type
    noise_level: float
    tilt: float = 0.5                # harmonic rolloff exponent

    def __post_init__(self):
        if self.gender not in ("M", "F"):
            raise DataError(f"gender must be M or F, got {self.gender!r}")
        if not (60.0 <= self.f0 <= 400.0):
            raise DataError(f"f0 {self.f0} outside [60, 400] Hz")
        if not (0.0 <= self.noise_level <= 0.2):
            raise DataError(f"noise_level {self.noise_level} outside [0, 0.2]")


@dataclass
class UttRecord:
    utt_id: str
    speaker_id: str
    gender: str
    audio_source: str
    text_source: str
    subset: str                      # "train" or "eval"


@dataclass
class CorpusManifest:
    records: list = field(default_factory=list)

    def validate(self):
        ids = [r.utt_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate utt_ids in manifest")
        for r in self.records:
            if r.gender not in ("M", "F"):
                raise DataError(f"{r.utt_id}: gender missing or invalid")
            if r.subset not in ("train", "eval"):
                raise DataError(f"{r.utt_id}: subset must be train or eval")

    def subset(self, name: str) -> list:
        return [r for r in self.records if r.subset == name]


def save_manifest(path, manifest: CorpusManifest):
    manifest.validate()
    with open(path, "w", encoding="utf-8") as f:
        for r in manifest.records:
            f.write(json.dumps({
                "utt_id": r.utt_id, "speaker_id": r.speaker_id, "gender": r.gender,
                "audio_source": r.audio_source, "text_source": r.text_source,
                "subset": r.subset}, sort_keys=True) + "\n")


def _resolve(source: str, base: Path) -> str:
    p = Path(source)
    return str(p if p.is_absolute() else base / p)


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                # relative sources are interpreted against the manifest's directory
                audio = _resolve(d["audio_source"], path.parent)
                text = _resolve(d["text_source"], path.parent)
                records.append(UttRecord(d["utt_id"], d["speaker_id"], d["gender"],
                                         audio, text, d["subset"]))
            except (json.JSONDecodeError, KeyError) as e:
                raise DataError(f"{path}:{lineno}: malformed manifest line ({e})")
    m = CorpusManifest(records)
    m.validate()
    return m


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _token_duration_ms(token_index: int) -> float:
    # fixed per token type, spread over [60, 120] ms
    return 60.0 + (token_index * 17) % 61


def _token_peak_hz(token_index: int) -> float:
    # token-specific envelope peak, spread over [400, 2600] Hz
    return 400.0 + 200.0 * ((token_index * 5) % 12)


def synth_utterance(profile: SpeakerProfile, token_ids: list[int],
                    token_inventory: list[str], seed: int,
                    feat_cfg: FeatureConfig | None = None):
    """Render tokens as harmonic complexes; returns (Waveform, frame alignment).

    The alignment is the per-frame token label under feat_cfg framing, the
    synthetic analogue of a hybrid-ASR phone alignment at subsampling rate 1.
    """
    if not token_ids:
        raise DataError("empty token sequence")
    for tid in token_ids:
        if not (0 <= tid < len(token_inventory)):
            raise DataError(f"unknown token id {tid}")
    feat_cfg = feat_cfg or FeatureConfig()
    sr = feat_cfg.sample_rate
    rng = np.random.default_rng(seed)

    durations = [int(round(_token_duration_ms(t) * sr / 1000.0)) for t in token_ids]
    total = sum(durations)
    t_axis = np.arange(total) / sr
    wave = np.zeros(total)
    boundaries = np.cumsum([0] + durations)
    for (tid, lo, hi) in zip(token_ids, boundaries[:-1], boundaries[1:]):
        seg_t = t_axis[lo:hi]
        peak = _token_peak_hz(tid) * profile.formant_shifts[tid]
        n_harm = max(1, int(4000.0 // profile.f0))
        seg = np.zeros(hi - lo)
        for h in range(1, n_harm + 1):
            fh = h * profile.f0
            amp = np.exp(-((fh - peak) / 500.0) ** 2) + 0.3 * h ** (-profile.tilt - 1.0)
            seg += amp * np.sin(2.0 * np.pi * fh * seg_t)
        # short raised-cosine fade avoids clicks at token boundaries
        fade = min(32, (hi - lo) // 4)
        if fade > 0:
            ramp = 0.5 * (1 - np.cos(np.linspace(0, np.pi, fade)))
            seg[:fade] *= ramp
            seg[-fade:] *= ramp[::-1]
        wave[lo:hi] = seg
    wave += profile.noise_level * rng.standard_normal(total)
    wave *= 0.95 / max(np.max(np.abs(wave)), 1e-9)

    w = Waveform(wave, sr)
    n_frames = frame_count(total, feat_cfg)
    centers = feat_cfg.hop * np.arange(n_frames) + feat_cfg.frame_length // 2
    labels = []
    for c in centers:
        pos = int(np.searchsorted(boundaries[1:], c, side="right"))
        labels.append(token_inventory[token_ids[min(pos, len(token_ids) - 1)]])
    return w, labels


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

def make_speakers(n_speakers: int, n_tokens: int, seed: int) -> list[SpeakerProfile]:
    """Gender-balanced speakers with f0 values spread across each gender range."""
    rng = np.random.default_rng(seed)
    profiles = []
    n_m = (n_speakers + 1) // 2
    n_f = n_speakers - n_m
    counts = {"M": n_m, "F": n_f}
    index = {"M": 0, "F": 0}
    for i in range(n_speakers):
        gender = "M" if i % 2 == 0 else "F"
        lo, hi = MALE_F0_RANGE if gender == "M" else FEMALE_F0_RANGE
        k, n = index[gender], counts[gender]
        # golden-ratio spread: consecutive same-gender speakers sit far apart
        # in the pitch range rather than on adjacent grid points
        f0 = lo + (hi - lo) * ((0.5 + k * 0.618033988749895) % 1.0) \
            + rng.uniform(-2.0, 2.0)
        index[gender] += 1
        # one vocal-tract scale per speaker, spread over its range by a
        # golden-ratio sequence so consecutive same-gender speakers sit far
        # apart, with small per-token variation around it
        vocal_tract = 0.7 + 0.7 * ((0.5 + k * 0.618033988749895) % 1.0) \
            + rng.uniform(-0.02, 0.02)
        profiles.append(SpeakerProfile(
            speaker_id=f"spk{i:03d}",
            gender=gender,
            f0=float(np.clip(f0, 60.0, 400.0)),
            formant_shifts=[float(vocal_tract * s)
                            for s in rng.uniform(0.96, 1.04, size=n_tokens)],
            noise_level=float(rng.uniform(0.01, 0.05)),
            tilt=float(rng.uniform(0.2, 0.9)),
        ))
    return profiles


def generate_corpus(out_dir, n_speakers: int, utts_per_speaker: int, seed: int,
                    token_inventory: list[str] | None = None,
                    n_eval_speakers: int | None = None,
                    align_sr: int = 3,
                    text_kind: str = "transcript",
                    feat_cfg: FeatureConfig | None = None) -> CorpusManifest:
    """Materialize a synthetic corpus: audio, transcripts, alignments, manifest.

    Train and eval speaker sets are disjoint, both gender-balanced. Token
    sequences have random length in [5, 15]. Alignments are written at
    subsampling rate align_sr (one label per align_sr frames).
    """
    if n_speakers < 2:
        raise ConfigError("need at least 2 speakers")
    if utts_per_speaker < 2:
        raise ConfigError("need at least 2 utterances per speaker")
    if text_kind not in ("transcript", "alignment"):
        raise ConfigError(f"text_kind must be transcript or alignment, got {text_kind!r}")
    tokens = token_inventory or DEFAULT_TOKENS
    feat_cfg = feat_cfg or FeatureConfig()
    if n_eval_speakers is None:
        n_eval_speakers = min(max(2, n_speakers // 3), n_speakers - 1)
    if n_eval_speakers >= n_speakers:
        raise ConfigError("eval speakers must leave at least one train speaker")

    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    (out_dir / "text").mkdir(parents=True, exist_ok=True)

    profiles = make_speakers(n_speakers, len(tokens), seed)
    # alternating genders make any even-length tail gender-balanced
    eval_ids = {p.speaker_id for p in profiles[n_speakers - n_eval_speakers:]}

    rng = np.random.default_rng(seed + 1)
    records = []
    for p in profiles:
        for u in range(utts_per_speaker):
            utt_id = f"{p.speaker_id}_u{u:03d}"
            length = int(rng.integers(8, 21))
            token_ids = [int(x) for x in rng.integers(0, len(tokens), size=length)]
            # per-utterance variation: pitch, tilt and noisiness wander
            # around the speaker's values, so no single surface statistic
            # identifies the speaker while the stable vocal-tract (formant)
            # cues remain learnable
            p_utt = dataclasses.replace(
                p,
                f0=float(p.f0 * rng.uniform(0.95, 1.05)),
                tilt=float(np.clip(p.tilt + rng.uniform(-0.1, 0.1), 0.05, 1.1)),
                noise_level=float(np.clip(p.noise_level * rng.uniform(0.7, 1.4),
                                          0.0, 0.2)))
            w, labels = synth_utterance(p_utt, token_ids, tokens,
                                        seed=int(rng.integers(0, 2**31)),
                                        feat_cfg=feat_cfg)
            audio_path = out_dir / "audio" / f"{utt_id}.npy"
            np.save(audio_path, w.samples)
            trans_path = out_dir / "text" / f"{utt_id}.txt"
            trans_path.write_text(" ".join(tokens[t] for t in token_ids) + "\n",
                                  encoding="utf-8")
            ali_path = out_dir / "text" / f"{utt_id}.ali"
            with open(ali_path, "w", encoding="utf-8") as f:
                f.write(f"sr={align_sr}\n")
                for k in range(0, len(labels), align_sr):
                    f.write(labels[k] + "\n")
            text_path = trans_path if text_kind == "transcript" else ali_path
            # corpus-relative paths keep the manifest relocatable and make
            # identically seeded corpora byte-identical regardless of out_dir
            records.append(UttRecord(
                utt_id=utt_id, speaker_id=p.speaker_id, gender=p.gender,
                audio_source=str(audio_path.relative_to(out_dir)),
                text_source=str(text_path.relative_to(out_dir)),
                subset="eval" if p.speaker_id in eval_ids else "train"))

    manifest = CorpusManifest(records)
    save_manifest(out_dir / "manifest.jsonl", manifest)
    with open(out_dir / "speakers.json", "w", encoding="utf-8") as f:
        json.dump([p.__dict__ for p in profiles], f, indent=2, sort_keys=True)
    return manifest


def load_audio(path) -> Waveform:
    """Load .npy float arrays or 16-bit PCM .wav files."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    if path.suffix == ".npy":
        return Waveform(np.load(path))
    if path.suffix == ".wav":
        import wave
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2:
                raise DataError(f"{path}: only 16-bit PCM wav supported")
            raw = wf.readframes(wf.getnframes())
            samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
            if wf.getnchannels() > 1:
                samples = samples.reshape(-1, wf.getnchannels()).mean(axis=1)
            return Waveform(samples, wf.getframerate())
    raise DataError(f"unsupported audio format: {path}")
