"""Controller math: coupling gates, the masked secant update, episodes."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segservo.errors import DimensionMismatchError
from segservo.servo import (
    COUPLING_PRESETS,
    CouplingMatrix,
    JacobianFile,
    OUTCOME_CONVERGED,
    OUTCOME_MAX_STEPS,
    OUTCOME_OBJECT_LOST,
    OUTCOME_STALLED,
    PseudoJacobian,
    ServoConfig,
    control_step,
    converged,
    coupling_preset,
    feature_error,
    format_jacobian,
    hadamard_broyden_update,
    initial_pseudojacobian,
    load_jacobian,
    parse_jacobian,
    save_jacobian,
    servo_episode,
)

finite = st.floats(-100.0, 100.0, allow_nan=False, allow_infinity=False)


def oracle_update(values, mask, dq, de, alpha, epsilon):
    """Scalar-loop restatement of the masked secant update."""
    n, k = values.shape
    jde = [sum(values[i][c] * de[c] for c in range(k)) for i in range(n)]
    denom = sum(dq[i] * jde[i] for i in range(n))
    if abs(denom) < epsilon:
        return values, False
    dqv = [sum(dq[i] * values[i][j] for i in range(n)) for j in range(k)]
    cand = np.array(
        [
            [
                values[i][j] + alpha * (dq[i] - jde[i]) * dqv[j] / denom * mask[i][j]
                for j in range(k)
            ]
            for i in range(n)
        ]
    )
    if not np.isfinite(cand).all():
        return values, False
    return cand, True


class TestCouplingMatrix:
    def test_from_pairs(self):
        c = CouplingMatrix.from_pairs({"a": ("s_x",), "b": ("s_y",)})
        assert c.joints == ("a", "b")
        assert c.features == ("s_x", "s_y")
        np.testing.assert_array_equal(c.matrix, [[1.0, 0.0], [0.0, 1.0]])

    def test_from_pairs_multi_feature_joint(self):
        c = CouplingMatrix.from_pairs({"a": ("s_x", "s_y"), "b": ()})
        np.testing.assert_array_equal(c.matrix, [[1.0, 1.0], [0.0, 0.0]])

    def test_from_pairs_unknown_feature(self):
        with pytest.raises(ValueError):
            CouplingMatrix.from_pairs({"a": ("s_z",)})

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            CouplingMatrix(("a",), ("s_x",), np.array([[0.5]]))

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            CouplingMatrix(("a",), ("s_x",), np.zeros((1, 1)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            CouplingMatrix(("a", "b"), ("s_x",), np.ones((1, 1)))

    def test_presets_cover_documented_behaviors(self):
        assert set(COUPLING_PRESETS) == {
            "head",
            "arm_lift",
            "arm_wrist",
            "arm_both",
            "base",
            "base_grasp",
        }
        base = coupling_preset("base")
        assert base.joints == ("base_forward", "base_lateral")
        np.testing.assert_array_equal(base.matrix, [[1.0, 0.0], [0.0, 1.0]])
        both = coupling_preset("arm_both")
        # two joints share s_x, one owns s_y
        np.testing.assert_array_equal(
            both.matrix, [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        )

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            coupling_preset("wheels")


class TestPseudoJacobian:
    def test_initial_seeds_coupled_entries(self):
        c = coupling_preset("arm_both")
        j = initial_pseudojacobian(c, 0.001)
        np.testing.assert_array_equal(
            j.values, [[0.001, 0.0], [0.001, 0.0], [0.0, 0.001]]
        )

    def test_entry_lookup(self):
        j = initial_pseudojacobian(coupling_preset("base"), 0.002)
        assert j.entry("base_forward", "s_x") == 0.002
        assert j.entry("base_forward", "s_y") == 0.0

    def test_rejects_value_outside_coupling(self):
        c = coupling_preset("base")
        with pytest.raises(ValueError):
            PseudoJacobian(c, np.array([[0.001, 0.001], [0.0, 0.001]]))

    def test_rejects_shape_mismatch(self):
        c = coupling_preset("base")
        with pytest.raises(DimensionMismatchError):
            PseudoJacobian(c, np.zeros((3, 2)))


class TestHadamardBroydenUpdate:
    def test_scalar_hand_case(self):
        # one joint, one feature, seed 0.001: dq=0.01 against de=-5 with
        # alpha=0.1 lands exactly on 0.0007
        c = CouplingMatrix(("j",), ("s_x",), np.array([[1.0]]))
        j = PseudoJacobian(c, np.array([[0.001]]))
        j2, applied = hadamard_broyden_update(j, [0.01], [-5.0], alpha=0.1)
        assert applied
        assert abs(j2.values[0, 0] - 0.0007) <= 1e-12

    def test_two_by_two_hand_case(self):
        # diagonal coupling, dq=(0.01,-0.02), de=(-5,4): denominator is
        # -1.3e-4 and the closed forms are 0.001 - (15/13)e-4 and
        # 0.001 - (48/13)e-4
        c = CouplingMatrix.from_pairs({"a": ("s_x",), "b": ("s_y",)})
        j = PseudoJacobian(c, np.array([[0.001, 0.0], [0.0, 0.001]]))
        j2, applied = hadamard_broyden_update(j, [0.01, -0.02], [-5.0, 4.0], alpha=0.1)
        assert applied
        assert abs(j2.values[0, 0] - 0.0008846153846153846) <= 1e-12
        assert abs(j2.values[1, 1] - 0.0006307692307692308) <= 1e-12
        assert j2.values[0, 1] == 0.0
        assert j2.values[1, 0] == 0.0

    def test_skips_small_denominator(self):
        c = coupling_preset("base")
        j = initial_pseudojacobian(c)
        j2, applied = hadamard_broyden_update(j, [0.0, 0.0], [1.0, 1.0])
        assert not applied
        assert j2 is j

    def test_skips_non_finite_candidate(self):
        c = CouplingMatrix(("j",), ("s_x", "s_y"), np.array([[1.0, 1.0]]))
        j = PseudoJacobian(c, np.array([[1e308, 1e308]]))
        j2, applied = hadamard_broyden_update(j, [1.0], [1.0, 1.0])
        assert not applied
        assert j2 is j

    def test_dimension_checks(self):
        j = initial_pseudojacobian(coupling_preset("base"))
        with pytest.raises(DimensionMismatchError):
            hadamard_broyden_update(j, [0.1], [1.0, 1.0])
        with pytest.raises(DimensionMismatchError):
            hadamard_broyden_update(j, [0.1, 0.1], [1.0])

    @given(st.integers(0, 2**31 - 1))
    def test_matches_scalar_oracle(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 4))
        k = int(r.integers(1, 3))
        mask = (r.random((n, k)) < 0.6).astype(float)
        if not mask.any():
            mask[0, 0] = 1.0
        c = CouplingMatrix(
            tuple(f"j{i}" for i in range(n)),
            tuple(f"f{i}" for i in range(k)),
            mask,
        )
        values = r.normal(scale=0.5, size=(n, k)) * mask
        j = PseudoJacobian(c, values)
        dq = r.normal(scale=0.1, size=n)
        de = r.normal(scale=2.0, size=k)
        j2, applied = hadamard_broyden_update(j, dq, de, alpha=0.1, epsilon=1e-9)
        ref, ref_applied = oracle_update(values, mask, dq, de, 0.1, 1e-9)
        assert applied == ref_applied
        np.testing.assert_allclose(j2.values, ref, rtol=1e-10, atol=1e-13)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 8))
    def test_masked_entries_stay_exactly_zero(self, seed, rounds):
        r = np.random.default_rng(seed)
        c = coupling_preset("arm_both")
        j = initial_pseudojacobian(c)
        for _ in range(rounds):
            dq = r.normal(scale=0.05, size=3)
            de = r.normal(scale=3.0, size=2)
            j, _ = hadamard_broyden_update(j, dq, de)
        assert j.values[0, 1] == 0.0
        assert j.values[1, 1] == 0.0
        assert j.values[2, 0] == 0.0


class TestControlLaw:
    def test_feature_error(self):
        e = feature_error((300.0, 250.0), (320.0, 240.0))
        np.testing.assert_array_equal(e, [-20.0, 10.0])

    def test_feature_error_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            feature_error((1.0,), (1.0, 2.0))

    def test_control_step_known(self):
        c = CouplingMatrix.from_pairs({"a": ("s_x",), "b": ("s_y",)})
        j = PseudoJacobian(c, np.array([[0.002, 0.0], [0.0, -0.001]]))
        dq = control_step(j, np.array([10.0, -20.0]), lam=0.5)
        np.testing.assert_allclose(dq, [-0.5 * 0.002 * 10.0, -0.5 * -0.001 * -20.0])

    def test_control_step_shape_check(self):
        j = initial_pseudojacobian(coupling_preset("base"))
        with pytest.raises(DimensionMismatchError):
            control_step(j, np.array([1.0, 2.0, 3.0]), lam=0.3)

    def test_converged_boundary(self):
        assert converged(np.array([3.0, 4.0]), 5.0)
        assert not converged(np.array([3.0, 4.0]), 4.999)

    def test_servo_config_validation(self):
        c = coupling_preset("base")
        with pytest.raises(ValueError):
            ServoConfig(coupling=c, target=(320.0, 240.0), lam=0.0)
        with pytest.raises(ValueError):
            ServoConfig(coupling=c, target=(320.0, 240.0), alpha=-0.1)
        with pytest.raises(ValueError):
            ServoConfig(coupling=c, target=(320.0, 240.0), tolerance=0.0)
        with pytest.raises(ValueError):
            ServoConfig(coupling=c, target=(320.0, 240.0), max_steps=0)
        with pytest.raises(DimensionMismatchError):
            ServoConfig(coupling=c, target=(320.0,))


def linear_plant(gain, q0, s0):
    """Noise-free linear world: features move linearly with the joints."""

    names = ("a", "b")

    def source(q, frame):
        dq = np.array([q[n] - q0[n] for n in names])
        s = s0 + gain @ dq
        return 1000, float(s[0]), float(s[1])

    return source


class TestServoEpisode:
    COUPLING = CouplingMatrix.from_pairs({"a": ("s_x",), "b": ("s_y",)})

    def exact_inverse_jacobian(self, gain):
        inv = np.linalg.inv(gain)
        # diagonal plant: inverse is diagonal, matching the coupling
        values = np.array([[inv[0, 0], 0.0], [0.0, inv[1, 1]]])
        return PseudoJacobian(self.COUPLING, values)

    def test_deadbeat_with_exact_jacobian(self):
        gain = np.diag([-800.0, 900.0])
        source = linear_plant(gain, {"a": 0.0, "b": 0.0}, np.array([420.0, 180.0]))
        config = ServoConfig(
            coupling=self.COUPLING,
            target=(320.0, 240.0),
            lam=1.0,
            tolerance=1e-6,
            max_steps=10,
        )
        result = servo_episode(
            config,
            source,
            {"a": 0.0, "b": 0.0},
            itertools.count(),
            jacobian=self.exact_inverse_jacobian(gain),
            learn=False,
        )
        assert result.outcome == OUTCOME_CONVERGED
        # one commanded move, second measurement already on target
        assert len(result.steps) == 2
        assert result.steps[-1].error_norm <= 1e-9

    def test_learning_from_seed_converges(self):
        gain = np.diag([-800.0, 900.0])
        source = linear_plant(gain, {"a": 0.0, "b": 0.0}, np.array([420.0, 180.0]))
        config = ServoConfig(
            coupling=self.COUPLING,
            target=(320.0, 240.0),
            lam=0.3,
            tolerance=2.0,
            max_steps=200,
        )
        result = servo_episode(
            config, source, {"a": 0.0, "b": 0.0}, itertools.count()
        )
        assert result.outcome == OUTCOME_CONVERGED
        assert result.updates_applied > 0
        assert len(result.updates) == len(result.steps) - 1
        # learned entries end with the signs of the true inverse
        assert result.jacobian.entry("a", "s_x") < 0.0
        assert result.jacobian.entry("b", "s_y") > 0.0

    def test_object_lost(self):
        def source(q, frame):
            return None

        config = ServoConfig(coupling=self.COUPLING, target=(320.0, 240.0))
        result = servo_episode(config, source, {"a": 0.0, "b": 0.0}, itertools.count())
        assert result.outcome == OUTCOME_OBJECT_LOST
        assert result.steps == []

    def test_max_steps(self):
        gain = np.diag([-800.0, 900.0])
        source = linear_plant(gain, {"a": 0.0, "b": 0.0}, np.array([420.0, 180.0]))
        config = ServoConfig(
            coupling=self.COUPLING,
            target=(320.0, 240.0),
            lam=1e-9,
            tolerance=0.5,
            max_steps=3,
        )
        result = servo_episode(
            config,
            source,
            {"a": 0.0, "b": 0.0},
            itertools.count(),
            jacobian=self.exact_inverse_jacobian(gain),
            learn=False,
        )
        assert result.outcome == OUTCOME_MAX_STEPS
        assert len(result.steps) == 3

    def test_stalled_when_clamped_to_place(self):
        gain = np.diag([-800.0, 900.0])
        q0 = {"a": 0.0, "b": 0.0}
        source = linear_plant(gain, q0, np.array([420.0, 180.0]))
        config = ServoConfig(coupling=self.COUPLING, target=(320.0, 240.0))

        def clamp(q):
            return dict(q0), ["a", "b"]

        result = servo_episode(
            config,
            source,
            q0,
            itertools.count(),
            jacobian=self.exact_inverse_jacobian(gain),
            clamp=clamp,
            learn=False,
        )
        assert result.outcome == OUTCOME_STALLED
        assert result.steps[0].clamped == ("a", "b")

    def test_frame_counter_is_external(self):
        gain = np.diag([-800.0, 900.0])
        source = linear_plant(gain, {"a": 0.0, "b": 0.0}, np.array([420.0, 180.0]))
        config = ServoConfig(
            coupling=self.COUPLING, target=(320.0, 240.0), tolerance=1e-6, lam=1.0
        )
        counter = itertools.count(7)
        result = servo_episode(
            config,
            source,
            {"a": 0.0, "b": 0.0},
            counter,
            jacobian=self.exact_inverse_jacobian(gain),
            learn=False,
        )
        assert [s.frame for s in result.steps] == [7, 8]
        assert next(counter) == 9

    def test_final_q_reflects_motion(self):
        gain = np.diag([-800.0, 900.0])
        source = linear_plant(gain, {"a": 0.0, "b": 0.0}, np.array([420.0, 180.0]))
        config = ServoConfig(
            coupling=self.COUPLING, target=(320.0, 240.0), tolerance=1e-6, lam=1.0
        )
        result = servo_episode(
            config,
            source,
            {"a": 0.0, "b": 0.0},
            itertools.count(),
            jacobian=self.exact_inverse_jacobian(gain),
            learn=False,
        )
        # target shift: e0 = (100, -60); dq = -inv(gain) @ e0
        assert result.final_q["a"] == pytest.approx(100.0 / 800.0, abs=1e-9)
        assert result.final_q["b"] == pytest.approx(60.0 / 900.0, abs=1e-9)


class TestJacobianFile:
    def make_file(self):
        c = coupling_preset("base")
        j = PseudoJacobian(c, np.array([[-0.0011452666189394503, 0.0], [0.0, 0.0011708715396055967]]))
        return JacobianFile(jacobian=j, alpha=0.1, lam=0.5, target=(320.0, 240.0))

    def test_format_exact_text(self):
        text = format_jacobian(self.make_file())
        assert text == (
            "segservo-jacobian v1\n"
            "alpha 0.1\n"
            "lambda 0.5\n"
            "features s_x s_y\n"
            "target 320.0 240.0\n"
            "joints 2\n"
            "joint base_forward coupling 1 0 values -0.0011452666189394503 0.0\n"
            "joint base_lateral coupling 0 1 values 0.0 0.0011708715396055967\n"
        )

    def test_round_trip_bit_exact(self):
        saved = self.make_file()
        text = format_jacobian(saved)
        parsed = parse_jacobian(text)
        assert format_jacobian(parsed) == text
        np.testing.assert_array_equal(parsed.jacobian.values, saved.jacobian.values)
        assert parsed.alpha == saved.alpha
        assert parsed.lam == saved.lam
        assert parsed.target == saved.target

    def test_save_load_file(self, tmp_path):
        saved = self.make_file()
        path = tmp_path / "jac.txt"
        save_jacobian(saved, path)
        loaded = load_jacobian(path)
        assert format_jacobian(loaded) == format_jacobian(saved)

    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_random_values(self, seed):
        r = np.random.default_rng(seed)
        c = coupling_preset("arm_both")
        values = r.normal(scale=0.01, size=(3, 2)) * c.matrix
        saved = JacobianFile(
            jacobian=PseudoJacobian(c, values),
            alpha=float(r.uniform(0.01, 1.0)),
            lam=float(r.uniform(0.1, 1.0)),
            target=(float(r.uniform(0, 640)), float(r.uniform(0, 480))),
        )
        text = format_jacobian(saved)
        assert format_jacobian(parse_jacobian(text)) == text

    def test_parse_rejects_bad_magic(self):
        with pytest.raises(ValueError):
            parse_jacobian("something else\nalpha 0.1\n")

    def test_parse_rejects_missing_field(self):
        text = format_jacobian(self.make_file()).replace("lambda 0.5\n", "")
        with pytest.raises(ValueError):
            parse_jacobian(text)

    def test_parse_rejects_wrong_joint_count(self):
        text = format_jacobian(self.make_file()).replace("joints 2", "joints 3")
        with pytest.raises(ValueError):
            parse_jacobian(text)

    def test_parse_rejects_malformed_joint_line(self):
        text = format_jacobian(self.make_file()).replace(
            "joint base_lateral coupling 0 1 values 0.0 0.0011708715396055967",
            "joint base_lateral coupling 0 1",
        )
        with pytest.raises(ValueError):
            parse_jacobian(text)
