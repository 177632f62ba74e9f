"""Loading a directory of ``.jp`` songs and counting what is in it."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .notation import DEFAULT_TECHNIQUES, School, Score, ScoreError, TechniqueRegistry, parse_score

# dataset size reported for the published Dizi collection
REPORTED = {"songs": 28, "notes": 19413, "North": 7320, "South": 5605}


@dataclass
class Corpus:
    scores: list[Score] = field(default_factory=list)
    paths: list[Path] = field(default_factory=list)
    errors: list[tuple[Path, str]] = field(default_factory=list)


def load_corpus(directory, registry: TechniqueRegistry = DEFAULT_TECHNIQUES) -> Corpus:
    """Parse every ``*.jp`` file below ``directory`` in sorted path order.

    Unparseable files are collected in ``errors`` instead of aborting.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    corpus = Corpus()
    for path in sorted(root.rglob("*.jp")):
        try:
            score = parse_score(path.read_text(encoding="utf-8"), registry)
        except (ScoreError, UnicodeDecodeError) as exc:
            corpus.errors.append((path, str(exc)))
            continue
        corpus.scores.append(score)
        corpus.paths.append(path)
    return corpus


@dataclass
class CorpusStats:
    songs: int
    notes: int
    rests: int
    notes_by_school: dict[str, int]
    songs_by_school: dict[str, int]
    techniques_by_school: dict[str, dict[str, int]]
    errors: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {
            "songs": self.songs,
            "notes": self.notes,
            "rests": self.rests,
            "songs_by_school": self.songs_by_school,
            "notes_by_school": self.notes_by_school,
            "techniques_by_school": self.techniques_by_school,
            "errors": [{"file": f, "message": m} for f, m in self.errors],
        }

    def to_table(self) -> str:
        lines = [f"songs: {self.songs}   notes: {self.notes}   rests: {self.rests}",
                 f"{'school':<8} {'songs':>6} {'notes':>7}  techniques"]
        for school in (s.value for s in School):
            tech = self.techniques_by_school.get(school, {})
            tech_text = ", ".join(f"{k}={v}" for k, v in sorted(tech.items())) or "-"
            lines.append(f"{school:<8} {self.songs_by_school.get(school, 0):>6} "
                         f"{self.notes_by_school.get(school, 0):>7}  {tech_text}")
        for f, m in self.errors:
            lines.append(f"error: {f}: {m}")
        return "\n".join(lines) + "\n"


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Song and note counts per school; rests are counted separately from notes."""
    notes: Counter = Counter()
    songs: Counter = Counter()
    techniques: dict[str, Counter] = {}
    rests = 0
    for score in corpus.scores:
        school = score.school.value
        songs[school] += 1
        for n in score.notes:
            if n.is_rest:
                rests += 1
                continue
            notes[school] += 1
            if n.technique != "None":
                techniques.setdefault(school, Counter())[n.technique] += 1
    return CorpusStats(
        songs=len(corpus.scores),
        notes=sum(notes.values()),
        rests=rests,
        notes_by_school=dict(sorted(notes.items())),
        songs_by_school=dict(sorted(songs.items())),
        techniques_by_school={k: dict(sorted(v.items())) for k, v in sorted(techniques.items())},
        errors=[(str(p), m) for p, m in corpus.errors],
    )


def compare_with_reported(stats: CorpusStats) -> list[str]:
    """Warnings where totals differ from the published dataset size (the corpus may have grown)."""
    found = {
        "songs": stats.songs,
        "notes": stats.notes,
        "North": stats.notes_by_school.get("North", 0),
        "South": stats.notes_by_school.get("South", 0),
    }
    return [f"warning: {k} = {found[k]}, published figure is {v}" for k, v in REPORTED.items() if found[k] != v]
