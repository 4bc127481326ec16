"""Byte-level corpus handling for desk-scale training.

Training accepts any text file. For reproducible defaults the package ships a
deterministic pseudo-English synthesizer (Zipf-weighted word draws with
sentence and paragraph structure); ``data/corpus.txt`` in the repository is
its output for the default size and seed, and ``corpus="builtin"`` in a
training config regenerates the identical bytes in memory, so runs do not
depend on any checked-out path.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "synthesize_corpus",
    "write_default_corpus",
    "load_corpus",
    "CorpusDataset",
    "DEFAULT_CORPUS_BYTES",
    "DEFAULT_CORPUS_SEED",
    "BUILTIN_CORPUS",
]

DEFAULT_CORPUS_BYTES = 3_000_000
DEFAULT_CORPUS_SEED = 7
BUILTIN_CORPUS = "builtin"

# A compact everyday-English vocabulary; spellings give the byte-level model
# plenty of learnable structure without any external data file.
_WORDS = (
    "the of and to in is that it was for on are with as his they at be this have from "
    "or had by hot word but what some we can out other were all there when up use your "
    "how said an each she which do their time if will way about many then them write "
    "would like so these her long make thing see him two has look more day could go "
    "come did number sound no most people my over know water than call first who may "
    "down side been now find any new work part take get place made live where after "
    "back little only round man year came show every good me give our under name very "
    "through just form sentence great think say help low line differ turn cause much "
    "mean before move right boy old too same tell does set three want air well also "
    "play small end put home read hand port large spell add even land here must big "
    "high such follow act why ask men change went light kind off need house picture "
    "try us again animal point mother world near build self earth father head stand "
    "own page should country found answer school grow study still learn plant cover "
    "food sun four between state keep eye never last let thought city tree cross farm "
    "hard start might story saw far sea draw left late run while press close night "
    "real life few north open seem together next white children begin got walk example "
    "ease paper group always music those both mark often letter until mile river car "
    "feet care second book carry took science eat room friend began idea fish mountain "
    "stop once base hear horse cut sure watch color face wood main enough plain girl "
    "usual young ready above ever red list though feel talk bird soon body dog family "
    "direct pose leave song measure door product black short numeral class wind "
    "question happen complete ship area half rock order fire south problem piece told "
    "knew pass since top whole king space heard best hour better true during hundred "
    "five remember step early hold west ground interest reach fast verb sing listen "
    "six table travel less morning ten simple several vowel toward war lay against "
    "pattern slow center love person money serve appear road map rain rule govern pull "
    "cold notice voice unit power town fine certain fly fall lead cry dark machine "
    "note wait plan figure star box noun field rest correct able pound done beauty "
    "drive stood contain front teach week final gave green oh quick develop ocean "
    "warm free minute strong special mind behind clear tail produce fact street inch "
    "multiply nothing course stay wheel full force blue object decide surface deep "
    "moon island foot system busy test record boat common gold possible plane stead "
    "dry wonder laugh thousand ago ran check game shape equate miss brought heat snow "
    "tire bring yes distant fill east paint language among"
).split()


def synthesize_corpus(n_bytes: int = DEFAULT_CORPUS_BYTES, seed: int = DEFAULT_CORPUS_SEED) -> bytes:
    """Deterministic pseudo-English text of (at least) ``n_bytes`` bytes."""
    rng = np.random.default_rng(seed)
    words = np.array(_WORDS)
    # Zipf-like frequencies so common words dominate, as in natural text
    ranks = np.arange(1, len(words) + 1, dtype=np.float64)
    probs = 1.0 / ranks
    probs /= probs.sum()

    pieces: list[str] = []
    total = 0
    while total < n_bytes:
        n_sent = int(rng.integers(3, 7))
        paragraph: list[str] = []
        for _ in range(n_sent):
            n_words = int(rng.integers(4, 14))
            ws = list(words[rng.choice(len(words), size=n_words, p=probs)])
            ws[0] = ws[0].capitalize()
            if n_words > 7 and rng.random() < 0.5:
                comma_at = int(rng.integers(2, n_words - 2))
                ws[comma_at] = ws[comma_at] + ","
            end = "." if rng.random() < 0.9 else ("?" if rng.random() < 0.5 else "!")
            paragraph.append(" ".join(ws) + end)
        chunk = " ".join(paragraph) + "\n\n"
        pieces.append(chunk)
        total += len(chunk)
    return "".join(pieces).encode("ascii")


def write_default_corpus(path: str, n_bytes: int = DEFAULT_CORPUS_BYTES,
                         seed: int = DEFAULT_CORPUS_SEED) -> str:
    """Materialize the builtin corpus to a file (skips if already present)."""
    if not os.path.exists(path):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(synthesize_corpus(n_bytes, seed))
    return path


def load_corpus(source: str) -> bytes:
    """Read corpus bytes from a path, or synthesize when ``source`` is "builtin"."""
    if source == BUILTIN_CORPUS:
        return synthesize_corpus()
    with open(source, "rb") as fh:
        return fh.read()


class CorpusDataset:
    """Byte-token stream with a boundary train/validation split.

    The validation shard is the trailing ``eval_frac`` of the stream, so
    validation windows never overlap training windows.
    """

    def __init__(self, data: bytes, eval_frac: float = 0.05):
        if not 0 < eval_frac < 1:
            raise ValueError("eval_frac must be in (0, 1)")
        tokens = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
        n_val = max(int(len(tokens) * eval_frac), 1)
        if n_val >= len(tokens):
            raise ValueError("corpus too small for the requested split")
        self.train_tokens = tokens[:-n_val]
        self.val_tokens = tokens[-n_val:]

    @classmethod
    def from_source(cls, source: str, eval_frac: float = 0.05) -> "CorpusDataset":
        return cls(load_corpus(source), eval_frac)

    def sample_batch(self, rng: np.random.Generator, batch_size: int, seq_len: int):
        """Random training windows; returns (inputs, targets) of shape (B, s)."""
        max_start = len(self.train_tokens) - seq_len - 1
        if max_start < 1:
            raise ValueError("training shard shorter than one window")
        starts = rng.integers(0, max_start, size=batch_size)
        x = np.stack([self.train_tokens[s : s + seq_len] for s in starts])
        y = np.stack([self.train_tokens[s + 1 : s + seq_len + 1] for s in starts])
        return x, y

    def val_windows(self, seq_len: int, max_tokens: int | None = None):
        """Non-overlapping validation windows as (inputs, targets) pairs."""
        toks = self.val_tokens
        if len(toks) < seq_len + 1:
            raise ValueError("validation shard shorter than one window")
        if max_tokens is not None:
            toks = toks[: max_tokens + 1]
        for start in range(0, len(toks) - seq_len - 1 + 1, seq_len):
            yield toks[start : start + seq_len], toks[start + 1 : start + seq_len + 1]
