import gzip
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghz_factory.estimation import estimate_beta
from ghz_factory.optics import LOGICAL_MINUS, LOGICAL_PLUS, PARITY_SETTINGS, PATTERNS, DetectorModel
from ghz_factory.protocol import IonOutcome, make_bell
from ghz_factory.timetags import (
    AttemptWindowing,
    CountTable,
    EventKind,
    MalformedEventError,
    MissingHeaderError,
    ParseError,
    StreamHeader,
    TimetagEvent,
    UnknownKindError,
    UnsortedEventsError,
    extract_coincidences,
    format_stream,
    parse_stream,
    synthesize_stream,
    write_stream,
)

from .conftest import WERNER_P

HEADER = StreamHeader(PARITY_SETTINGS[0])
W = AttemptWindowing()


def start(t):
    return TimetagEvent(EventKind.ATTEMPT_START, t)


def click(t, ch):
    return TimetagEvent(EventKind.DETECTION, t, channel=ch)


def ion(t, label):
    return TimetagEvent(EventKind.ION_RESULT, t, outcome=IonOutcome.parse(label))


def attempt(t0, channels, label=None, dt=1000):
    """Events for one attempt; ``channels`` gives the per-window click, '-' for none."""
    evs = [start(t0)]
    for k, ch in enumerate(channels):
        if ch != "-":
            evs.append(click(t0 + W.window_offsets_ns[k] + dt, ch))
    if label is not None:
        evs.append(ion(t0 + W.span_ns + 1000, label))
    return evs


def stream_lines(events):
    return format_stream(HEADER, events).splitlines()


class TestParse:
    def test_empty_body(self):
        events, header = parse_stream(stream_lines([]))
        assert events == [] and header == HEADER

    def test_round_trip(self, tmp_path):
        evs = attempt(0, "rtr", "↓↑↑")
        assert len(evs) == 5
        path = tmp_path / "s.jsonl"
        write_stream(path, HEADER, evs)
        back, header = parse_stream(path)
        assert back == evs and header == HEADER
        write_stream(tmp_path / "again.jsonl", header, back)
        assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()

    def test_gzip_round_trip(self, tmp_path):
        evs = attempt(0, "ttr", "ddu")
        path = tmp_path / "s.jsonl.gz"
        write_stream(path, HEADER, evs)
        assert gzip.decompress(path.read_bytes()).decode() == format_stream(HEADER, evs)
        assert parse_stream(path)[0] == evs

    @pytest.mark.parametrize(
        "bad,error",
        [
            ('{"kind": "DETECTION", "time_ns": 5, "channel": "x"}', MalformedEventError),
            ('{"kind": "LASER", "time_ns": 5}', UnknownKindError),
            ('{"kind": "ATTEMPT_START", "time_ns": -1}', MalformedEventError),
            ('{"kind": "ATTEMPT_START", "time_ns": 1.5}', MalformedEventError),
            ('{"kind": "ION_RESULT", "time_ns": 200001, "outcome": "xyz"}', MalformedEventError),
            ("not json", MalformedEventError),
            ("[1, 2]", MalformedEventError),
        ],
    )
    def test_bad_line_names_its_number(self, bad, error):
        lines = stream_lines(attempt(0, "rtr", "duu") + [start(200_000)]) + [bad]
        with pytest.raises(error) as info:
            parse_stream(lines)
        assert info.value.line == len(lines)
        assert f"line {len(lines)}" in str(info.value)

    def test_unsorted(self):
        lines = stream_lines([start(100), click(50, "t")])
        with pytest.raises(UnsortedEventsError) as info:
            parse_stream(lines)
        assert info.value.line == 3

    def test_missing_header(self):
        with pytest.raises(MissingHeaderError):
            parse_stream([])
        with pytest.raises(MissingHeaderError):
            parse_stream(['{"kind": "ATTEMPT_START", "time_ns": 0}'])
        with pytest.raises(MissingHeaderError):
            parse_stream(['{"format_version": 99}'])

    def test_ion_result_needs_attempt(self):
        with pytest.raises(MalformedEventError):
            parse_stream(stream_lines([ion(5, "ddd")]))

    def test_error_classes_are_distinct(self):
        classes = {MissingHeaderError, UnknownKindError, UnsortedEventsError, MalformedEventError}
        assert all(issubclass(c, ParseError) for c in classes)
        assert not any(issubclass(a, b) for a in classes for b in classes if a is not b)

    @given(st.integers(0, 9), st.binary(min_size=1, max_size=30))
    def test_fuzzed_line_never_silently_accepted(self, pos, junk):
        lines = stream_lines(attempt(0, "rtr", "duu") + attempt(200_000, "ttt", "ddd"))
        pos = 1 + pos % (len(lines) - 1)
        corrupt = junk.decode("latin-1")
        try:
            obj = json.loads(corrupt)
        except ValueError:
            obj = None
        lines[pos] = corrupt
        try:
            events, _ = parse_stream(lines)
        except ParseError as exc:
            assert exc.line >= pos + 1
            return
        # accepted only when the replacement is itself a valid event or a blank line
        assert corrupt.strip() == "" or isinstance(obj, dict)


class TestExtract:
    def test_rtr_increments_one_cell(self):
        table = extract_coincidences(attempt(0, "rtr", "↓↑↑"))
        assert table.count("duu", "rtr") == 1
        assert table.coincidences == 1 and table.attempts == 1

    def test_missing_window_is_not_a_coincidence(self):
        table = extract_coincidences(attempt(0, "r-r"))
        assert table.coincidences == 0 and table.rejected_no_ion_result == 0
        assert table.singles_total("r") == 2

    def test_tallies(self):
        evs = attempt(0, "ttt") + attempt(200_000, "t-t", "uuu")
        table = extract_coincidences(evs)
        assert table.rejected_no_ion_result == 1
        assert table.ion_result_without_coincidence == 1
        assert table.coincidences == 0 and table.attempts == 2

    def test_double_click_earliest_wins_and_is_flagged(self):
        evs = [start(0), click(100, "r"), click(200, "t"), click(50_100, "t"), click(100_100, "t"), ion(151_000, "ddd")]
        table = extract_coincidences(evs)
        assert table.count("ddd", "rtt") == 1
        assert table.ambiguous_windows == 1
        assert table.singles[0].tolist() == [1, 1]

    def test_repeated_clicks_on_one_detector_count_once(self):
        evs = [start(0), click(100, "t"), click(200, "t"), click(50_100, "t"), click(100_100, "r"), ion(151_000, "udu")]
        table = extract_coincidences(evs)
        assert table.count("udu", "ttr") == 1
        assert table.singles[0].tolist() == [1, 0] and table.ambiguous_windows == 0

    def test_clicks_outside_windows_ignored(self):
        evs = [start(0), click(100, "t"), click(50_100, "t"), click(150_500, "r"), ion(151_000, "udu")]
        table = extract_coincidences(evs)
        assert table.coincidences == 0 and table.singles.sum() == 2

    def test_events_before_first_attempt_ignored(self):
        events, _ = parse_stream(stream_lines([click(10, "t")] + attempt(100, "ttt", "uuu")))
        assert extract_coincidences(events).count("uuu", "ttt") == 1

    @given(st.lists(st.tuples(st.sampled_from("tr-"), st.sampled_from("tr-"), st.sampled_from("tr-")), min_size=1, max_size=20),
           st.integers(0, 49_999))
    def test_jitter_within_window_leaves_counts(self, patterns, dt):
        evs0, evs1 = [], []
        for a, pat in enumerate(patterns):
            evs0 += attempt(a * 200_000, pat, "udd", dt=0)
            evs1 += attempt(a * 200_000, pat, "udd", dt=dt)
        assert extract_coincidences(evs0) == extract_coincidences(evs1)


def ideal_stream(setting=PARITY_SETTINGS[0], **kwargs):
    return synthesize_stream([make_bell()] * 3, setting, **kwargs)


class TestSampler:
    def test_extractor_recovers_truth_with_dark_counts(self):
        det = DetectorModel(0.7, 0.9, dark_counts_per_window=0.05)
        s = synthesize_stream([make_bell()] * 3, PARITY_SETTINGS[2], det, (0.5, 0.6, 0.7), attempts=5000, seed=3)
        table = extract_coincidences(s.events(), s.header.windowing)
        assert table == s.truth
        assert table.ambiguous_windows > 0
        assert table.coincidences <= table.attempts == 5000
        assert table.rejected_no_ion_result == 0

    def test_werner_source_recovers_truth(self):
        from ghz_factory.protocol import make_werner

        s = synthesize_stream([make_werner(WERNER_P)] * 3, LOGICAL_PLUS, attempts=2000, seed=1)
        assert extract_coincidences(s.events()) == s.truth

    def test_every_attempt_coincides_when_lossless(self):
        s = ideal_stream(attempts=2000, seed=0)
        assert s.truth.coincidences == 2000

    def test_deterministic(self):
        a = ideal_stream(attempts=500, seed=11, det=DetectorModel(0.8, 1.0))
        b = ideal_stream(attempts=500, seed=11, det=DetectorModel(0.8, 1.0))
        c = ideal_stream(attempts=500, seed=12, det=DetectorModel(0.8, 1.0))
        assert a.text == b.text and a.text != c.text

    def test_ideal_outcomes_uniform(self):
        n = 100_000
        s = ideal_stream(attempts=n, seed=2024)
        freq = s.truth.counts.sum(axis=1)
        sigma = np.sqrt(n * (1 / 8) * (7 / 8))
        assert np.all(np.abs(freq - n / 8) < 3 * sigma)

    @pytest.mark.parametrize("eff,product", [((0.24, 0.23, 0.21), 0.0116), ((0.2318, 0.2095, 0.1889), 0.00917)])
    def test_triple_rate_is_product(self, eff, product):
        n = 100_000
        s = ideal_stream(attempts=n, seed=7, efficiencies=eff)
        p = float(np.prod(eff))
        assert p == pytest.approx(product, abs=5e-5)
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(s.truth.coincidences / n - p) < 3 * sigma

    def test_beta_recovered_from_singles(self):
        det = DetectorModel.from_beta(1.25)
        tables = [ideal_stream(st_, det=det, attempts=50_000, seed=[5, i]).truth for i, st_ in enumerate((LOGICAL_PLUS, LOGICAL_MINUS))]
        est = estimate_beta(*tables)
        assert abs(est.value - 1.25) < 3 * est.sigma

    @pytest.mark.parametrize("kwargs", [{"attempts": 0}, {"efficiencies": (1, 1)}, {"efficiencies": (1, 1, 1.2)},
                                        {"attempt_period_ns": 150_500}, {"windowing": AttemptWindowing(100, 2)}])
    def test_invalid_inputs(self, kwargs):
        with pytest.raises(ValueError):
            ideal_stream(**{"seed": 0, **kwargs})


class TestCountTable:
    def test_csv_round_trip(self):
        counts = np.arange(64).reshape(8, 8)
        table = CountTable(counts=counts, attempts=5000)
        text = table.to_csv()
        assert text.splitlines()[0] == "lmn,opq,count"
        assert len(text.splitlines()) == 65
        assert CountTable.from_csv(text, attempts=5000) == table

    def test_dict_round_trip(self):
        s = ideal_stream(attempts=200, seed=1, det=DetectorModel(0.5, 0.9))
        assert CountTable.from_dict(json.loads(json.dumps(s.truth.to_dict()))) == s.truth

    def test_rejects_bad_shapes_and_negatives(self):
        with pytest.raises(ValueError):
            CountTable(counts=np.zeros((8, 7)))
        with pytest.raises(ValueError):
            CountTable(counts=-np.ones((8, 8)))

    def test_count_lookup(self):
        counts = np.zeros((8, 8), dtype=int)
        counts[IonOutcome.parse("udu").index, PATTERNS.index("rtr")] = 4
        assert CountTable(counts=counts).count("↑↓↑", "rtr") == 4

    def test_windowing_validation(self):
        with pytest.raises(ValueError):
            AttemptWindowing(50_000, 3, (0, 10_000, 100_000))
        with pytest.raises(ValueError):
            AttemptWindowing(0)
        assert AttemptWindowing(10, 3, (0, 20, 40)).window_of(25) == 1
        assert AttemptWindowing(10, 3, (0, 20, 40)).window_of(15) is None
