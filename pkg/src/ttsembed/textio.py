"""Text-side inputs: vocabulary, token encoding, and alignment handling.

Token sources are files of two kinds: transcripts (whitespace-separated
symbols, one utterance per file) and frame alignments (first line
"sr=<int>", then one label per line). Alignment labels at subsampling
rate s can be upsampled to a finer rate by label repetition.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError

PAD, EOS = 0, 1
RESERVED = ["<pad>", "<eos>"]


@dataclass
class Vocabulary:
    symbols: list                    # reserved entries first, then sorted symbols

    def __post_init__(self):
        if self.symbols[:2] != RESERVED:
            raise DataError("vocabulary must start with the reserved PAD/EOS entries")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("vocabulary contains duplicates")
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise DataError(f"symbol {symbol!r} not in vocabulary")

    def decode(self, ids) -> list:
        return [self.symbols[i] for i in ids]


@dataclass
class TokenSequence:
    utt_id: str
    ids: list                        # vocabulary indices, length J >= 1
    kind: str                        # "transcript" or "alignment"
    frame_sr: int = 1                # frames per label (alignment only)

    def __post_init__(self):
        if len(self.ids) < 1:
            raise DataError(f"{self.utt_id}: empty token sequence")
        if self.kind not in ("transcript", "alignment"):
            raise DataError(f"{self.utt_id}: bad kind {self.kind!r}")
        if self.kind == "alignment" and self.frame_sr < 1:
            raise DataError(f"{self.utt_id}: frame_sr must be >= 1")


def build_vocab(token_files, char_mode: bool = False) -> Vocabulary:
    """Vocabulary over all symbols seen in the given files, sorted after reserved.

    char_mode splits transcript symbols into characters; alignment labels
    are always kept whole.
    """
    seen = set()
    for path in token_files:
        symbols, sr = _read_symbols(path)
        if char_mode and sr is None:
            symbols = [c for s in symbols for c in s]
        seen.update(symbols)
    if not seen:
        raise DataError("no tokens observed; cannot build vocabulary")
    return Vocabulary(RESERVED + sorted(seen))


def encode_tokens(raw, vocab: Vocabulary, append_eos: bool,
                  utt_id: str = "", kind: str = "transcript",
                  frame_sr: int = 1) -> TokenSequence:
    if not raw:
        raise DataError(f"{utt_id}: empty symbol list")
    ids = [vocab.index(s) for s in raw]
    if append_eos:
        ids.append(EOS)
    return TokenSequence(utt_id, ids, kind, frame_sr)


def upsample_alignment(seq: TokenSequence, target_sr: int) -> TokenSequence:
    """Repeat each label s_in/s_out times; s_out must divide s_in."""
    if seq.kind != "alignment":
        raise ConfigError(f"{seq.utt_id}: can only upsample alignments")
    if target_sr < 1 or seq.frame_sr % target_sr != 0:
        raise ConfigError(
            f"{seq.utt_id}: target sr {target_sr} does not divide source sr {seq.frame_sr}")
    factor = seq.frame_sr // target_sr
    ids = [i for i in seq.ids for _ in range(factor)]
    return TokenSequence(seq.utt_id, ids, "alignment", target_sr)


def _read_symbols(path):
    """Returns (symbols, frame_sr or None). Alignment files carry an sr= header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"token file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if lines and lines[0].startswith("sr="):
        try:
            sr = int(lines[0][3:])
        except ValueError:
            raise DataError(f"{path}:1: malformed subsampling-rate header {lines[0]!r}")
        if sr < 1:
            raise DataError(f"{path}:1: subsampling rate must be >= 1")
        symbols = []
        for lineno, line in enumerate(lines[1:], 2):
            line = line.strip()
            if not line:
                continue
            if len(line.split()) != 1:
                raise DataError(f"{path}:{lineno}: expected one label per line")
            symbols.append(line)
        return symbols, sr
    symbols = []
    for line in lines:
        symbols.extend(line.split())
    return symbols, None


def load_tokens(path, vocab: Vocabulary, utt_id: str = "",
                char_mode: bool = False) -> TokenSequence:
    """Parse a transcript or alignment file into an encoded TokenSequence.

    Transcripts get an EOS appended; alignments never do. char_mode splits
    every transcript symbol into characters (smallest vocabulary).
    """
    symbols, sr = _read_symbols(path)
    if sr is not None:
        return encode_tokens(symbols, vocab, append_eos=False, utt_id=utt_id,
                             kind="alignment", frame_sr=sr)
    if char_mode:
        symbols = [c for s in symbols for c in s]
    return encode_tokens(symbols, vocab, append_eos=True, utt_id=utt_id,
                         kind="transcript")
