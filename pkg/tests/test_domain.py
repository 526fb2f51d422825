import pytest
from hypothesis import given, strategies as st

from speedgrid.domain import (DistanceExceedsLength, DistOutOfRangeError,
                              DomainError, Link, NonContiguousSteps,
                              NonPositiveLengthError, TrajectoryPoint, Trip,
                              TripValidationError, UnknownLink,
                              position_percent, read_links_csv,
                              read_trips_csv, trip_violations, validate_trip,
                              write_links_csv, write_trips_csv)


def make_link(link_id="L1", length=100.0, **kw):
    defaults = dict(curv_avg=0.01, curv_max=0.02, curv_min=0.005,
                    pitch_avg=1.0, pitch_max=2.0, pitch_min=0.0,
                    functional_class=2, speed_limit=50.0,
                    sign_start=0, sign_stop=1)
    defaults.update(kw)
    return Link(link_id=link_id, length=length, **defaults)


def make_point(trip_id="T1", step=0, link_id="L1", dist=10.0, **kw):
    defaults = dict(timestamp=1600000000 + step, day=1, hour=8, speed=42.0,
                    curv=0.01, yaw=90.0, elv=50.0, ptc=1.0)
    defaults.update(kw)
    return TrajectoryPoint(trip_id=trip_id, step_index=step, link_id=link_id,
                           dist_along_link=dist, **defaults)


class TestPositionPercent:
    def test_start_of_link(self):
        assert position_percent(0, 100) == 0.0

    def test_end_of_link(self):
        assert position_percent(100, 100) == 100.0

    def test_hand_arithmetic(self):
        assert position_percent(60, 100) == 60.0

    def test_non_positive_length(self):
        with pytest.raises(NonPositiveLengthError):
            position_percent(0, 0)

    def test_dist_out_of_range(self):
        with pytest.raises(DistOutOfRangeError):
            position_percent(120, 100)
        with pytest.raises(DistOutOfRangeError):
            position_percent(-1, 100)

    @given(st.floats(0.1, 1e5), st.floats(0.1, 1e5), st.floats(0.1, 1e5))
    def test_monotone_in_dist(self, length, d1, d2):
        d1, d2 = sorted((min(d1, length), min(d2, length)))
        assert position_percent(d1, length) <= position_percent(d2, length)

    @given(st.floats(0.1, 1e4), st.floats(0.0, 1.0), st.floats(0.01, 100.0))
    def test_scale_invariance(self, length, frac, scale):
        dist = frac * length
        assert position_percent(dist * scale, length * scale) == pytest.approx(
            position_percent(dist, length), abs=1e-9)


class TestValidateTrip:
    links = {"L1": make_link("L1", 100.0), "L2": make_link("L2", 50.0)}

    def test_valid_trip_passes(self):
        trip = Trip("T1", tuple(make_point(step=i) for i in range(3)))
        assert validate_trip(trip, self.links) is trip

    def test_idempotent(self):
        trip = Trip("T1", tuple(make_point(step=i) for i in range(3)))
        once = validate_trip(trip, self.links)
        twice = validate_trip(once, self.links)
        assert twice == trip

    def test_unknown_link(self):
        trip = Trip("T1", (make_point(link_id="Z"),))
        violations = trip_violations(trip, self.links)
        assert violations == [UnknownLink(step_index=0, link_id="Z")]

    def test_distance_exceeds_length(self):
        trip = Trip("T1", (make_point(dist=120.0),))
        [v] = trip_violations(trip, self.links)
        assert isinstance(v, DistanceExceedsLength)
        assert v.dist == 120.0 and v.length == 100.0

    def test_non_contiguous_steps(self):
        trip = Trip("T1", (make_point(step=0), make_point(step=2)))
        [v] = trip_violations(trip, self.links)
        assert isinstance(v, NonContiguousSteps)
        assert v.step_index == 2 and v.expected == 1

    def test_all_violations_reported(self):
        trip = Trip("T1", (make_point(step=1, link_id="Z", dist=300.0),))
        kinds = {type(v) for v in trip_violations(trip, self.links)}
        assert kinds == {UnknownLink, NonContiguousSteps}

    def test_validate_raises_with_all_violations(self):
        trip = Trip("T1", (make_point(step=0, dist=120.0),
                           make_point(step=5, link_id="Z")))
        with pytest.raises(TripValidationError) as err:
            validate_trip(trip, self.links)
        assert len(err.value.violations) == 3


class TestConstruction:
    def test_bad_day(self):
        with pytest.raises(DomainError):
            make_point(day=7)

    def test_bad_hour(self):
        with pytest.raises(DomainError):
            make_point(hour=24)

    def test_negative_speed(self):
        with pytest.raises(DomainError):
            make_point(speed=-1.0)

    def test_link_curvature_order(self):
        with pytest.raises(DomainError):
            make_link(curv_min=0.5, curv_avg=0.01)

    def test_link_functional_class(self):
        with pytest.raises(DomainError):
            make_link(functional_class=6)

    def test_link_positive_length(self):
        with pytest.raises(DomainError):
            make_link(length=0.0)

    def test_trip_id_mismatch(self):
        with pytest.raises(DomainError):
            Trip("T2", (make_point(trip_id="T1"),))


class TestCsvRoundTrip:
    def test_links(self, tmp_path):
        links = [make_link("A", 123.456), make_link("B", 50.0, sign_start=1)]
        path = tmp_path / "links.csv"
        write_links_csv(path, links)
        loaded = read_links_csv(path)
        assert loaded == {ln.link_id: ln for ln in links}

    def test_trips(self, tmp_path):
        trips = [Trip("T1", tuple(make_point(step=i, dist=float(i))
                                  for i in range(4))),
                 Trip("T2", (make_point(trip_id="T2", speed=13.757),))]
        path = tmp_path / "trips.csv"
        write_trips_csv(path, trips)
        assert read_trips_csv(path) == trips

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DomainError):
            read_trips_csv(path)
        with pytest.raises(DomainError):
            read_links_csv(path)
