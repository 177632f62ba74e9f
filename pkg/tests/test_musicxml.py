import xml.etree.ElementTree as ET
from fractions import Fraction

import pytest
from hypothesis import given, settings

from dizikit.musicxml import MusicXMLError, degree_to_pitch, divisions_for, export_musicxml
from dizikit.notation import KeySignature, Measure, NoteEvent, Score, parse_score
from strategies import scores

NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]


def major_scale_oracle(tonic_name: str, octave: int) -> list[str]:
    """Walk whole/half steps W W H W W W H up from the tonic, tracking octave by letter wrap."""
    steps = [2, 2, 1, 2, 2, 2, 1]
    idx, octv = NAMES.index(tonic_name), octave
    out = [f"{tonic_name}{octave}"]
    for s in steps[:-1]:
        idx += s
        if idx >= 12:
            idx -= 12
            octv += 1
        out.append(f"{NAMES[idx]}{octv}")
    return out


def test_do_in_c_is_c4():
    assert str(degree_to_pitch(1, 0, 0, KeySignature(0))) == "C4"


def test_sol_up_an_octave():
    assert str(degree_to_pitch(5, 0, 1, KeySignature(0))) == "G5"


def test_ti_in_g_is_f_sharp_5():
    assert str(degree_to_pitch(7, 0, 0, KeySignature(7))) == "F#5"


@pytest.mark.parametrize("tonic", range(12))
def test_all_keys_against_scale_walk(tonic):
    key = KeySignature(tonic, 4)
    ours = [str(degree_to_pitch(d, 0, 0, key)) for d in range(1, 8)]
    assert ours == major_scale_oracle(NAMES[tonic], 4)


def test_accidentals_and_octaves():
    key = KeySignature(0)
    assert str(degree_to_pitch(4, 1, 0, key)) == "F#4"
    assert str(degree_to_pitch(7, -1, 0, key)) == "A#4"
    assert str(degree_to_pitch(1, 0, -2, key)) == "C2"
    assert str(degree_to_pitch(1, -1, 0, key)) == "B3"


@pytest.mark.parametrize("tonic", range(12))
def test_injective_for_fixed_key(tonic):
    key = KeySignature(tonic)
    pitches = {degree_to_pitch(d, 0, o, key) for d in range(1, 8) for o in range(-2, 3)}
    assert len(pitches) == 7 * 5


def _notes(root):
    return root.findall("./part/measure/note")


def test_quarter_do_exports_c4_with_duration_equal_divisions():
    xml = export_musicxml(parse_score("key: 1=C\n1 0 1!tk 1\n"))
    root = ET.fromstring(xml.split("\n", 2)[2])
    div = int(root.find(".//divisions").text)
    first, rest, tongued, _ = _notes(root)
    assert first.find("pitch/step").text == "C"
    assert first.find("pitch/octave").text == "4"
    assert int(first.find("duration").text) == div
    assert first.find("type").text == "quarter"
    assert rest.find("rest") is not None and int(rest.find("duration").text) == div
    assert tongued.find("lyric/text").text == "tk"
    assert tongued.find("lyric").get("placement") == "below"
    assert first.find("lyric") is None


def test_triplets_use_time_modification():
    score = parse_score("time: 2/4\n1{1/3} 2{1/3} 3{1/3} 4/ 5/\n")
    root = ET.fromstring(export_musicxml(score).split("\n", 2)[2])
    assert root.find(".//divisions").text == "6"
    notes = _notes(root)
    assert [n.find("duration").text for n in notes] == ["2", "2", "2", "3", "3"]
    for n in notes[:3]:
        assert n.find("time-modification/actual-notes").text == "3"
        assert n.find("time-modification/normal-notes").text == "2"
        assert n.find("type").text == "eighth"
    assert notes[3].find("time-modification") is None


def test_key_time_and_sharp_spelling():
    score = parse_score("key: 1=D\ntime: 3/4\n3 7 4\n")
    root = ET.fromstring(export_musicxml(score).split("\n", 2)[2])
    assert root.find(".//key/fifths").text == "2"
    assert root.find(".//time/beats").text == "3"
    assert root.find(".//time/beat-type").text == "4"
    steps = [(n.find("pitch/step").text, n.findtext("pitch/alter")) for n in _notes(root)]
    assert steps == [("F", "1"), ("C", "1"), ("G", None)]


def test_pickup_measure_is_implicit():
    score = parse_score("time: 3/4\n5 | 1 2 3 | 1 - -\n")
    root = ET.fromstring(export_musicxml(score).split("\n", 2)[2])
    measures = root.findall("./part/measure")
    assert measures[0].get("number") == "0" and measures[0].get("implicit") == "yes"
    assert [m.get("number") for m in measures[1:]] == ["1", "2"]


def test_dotted_note_type():
    root = ET.fromstring(export_musicxml(parse_score("time: 2/4\n1. 2/\n")).split("\n", 2)[2])
    first = _notes(root)[0]
    assert first.find("type").text == "quarter"
    assert first.find("dot") is not None


def test_unrepresentable_duration():
    bad = NoteEvent(1)
    object.__setattr__(bad, "duration", Fraction(1, 5))
    with pytest.raises(MusicXMLError):
        export_musicxml(Score((Measure((bad,)),)))


@given(scores())
@settings(max_examples=100, deadline=None)
def test_export_structure(score):
    xml = export_musicxml(score)
    root = ET.fromstring(xml.split("\n", 2)[2])
    div = divisions_for(score)
    measures = root.findall("./part/measure")
    assert len(measures) == len(score.measures)
    for m_xml, m in zip(measures, score.measures):
        notes = m_xml.findall("note")
        assert len(notes) == len(m.notes)
        total = sum(int(n.find("duration").text) for n in notes)
        assert Fraction(total, div) == m.duration
        for n_xml, n in zip(notes, m.notes):
            assert (n_xml.find("rest") is not None) == n.is_rest
            lyric = n_xml.findtext("lyric/text")
            assert (lyric is not None) == (n.technique != "None")
