import itertools
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from grid_envs import (
    AGENT_ACTIONS,
    Action,
    EnvSpec,
    GridState,
    ObjectSpec,
    Orientation,
    direction_of,
    generate_episode,
    generate_episodes,
    make_env,
    mirror_action,
    mirror_spec,
    mirror_state,
    read_episodes,
    sample_initial,
    step,
    to_state_tensor,
    write_episodes,
)
from nidlab_errors import GridEnvError
from scoring_utils import make_rng


def build_spec(D, apex, orientation, rollable_flags, agent=False):
    objects = [
        ObjectSpec(id=i, name=f"o{i}", rollable=flag) for i, flag in enumerate(rollable_flags)
    ]
    if agent:
        objects.append(ObjectSpec(id=len(objects), name="agent", is_agent=True))
    return EnvSpec(D=D, apex=apex, orientation=orientation, objects=tuple(objects))


def valid_states(spec, shared=False):
    """All in-range states; `shared` also yields stacked non-agent objects."""

    for pos in itertools.product(range(spec.D), repeat=spec.n_objects):
        cells = [p for obj, p in zip(spec.objects, pos) if not obj.is_agent]
        if shared or len(cells) == len(set(cells)):
            yield GridState(pos)


def slope(spec, p):
    left = p < spec.apex
    if spec.orientation is Orientation.PEAK:
        return -1 if left else 1
    return 1 if left else -1


def oracle_step(spec, state, action):
    """Enumerate move-commitment subsets; keep the one consistent with processing order."""

    pos = list(state.pos)
    agent = spec.agent_index
    grabbed = None
    if agent is not None:
        start = pos[agent]
        delta = -1 if action in (Action.MOVE_LEFT_NO_GRAB, Action.MOVE_LEFT_GRAB) else 1
        target = min(max(start + delta, 0), spec.D - 1)
        pos[agent] = target
        if action in (Action.MOVE_LEFT_GRAB, Action.MOVE_RIGHT_GRAB):
            here = [o.id for o in spec.objects if not o.is_agent and pos[o.id] == start]
            if here:
                grabbed = min(here)
                pos[grabbed] = target

    movers = [o.id for o in spec.objects if o.rollable and o.id != grabbed]
    lefts = sorted((i for i in movers if slope(spec, pos[i]) < 0), key=lambda i: pos[i])
    rights = sorted((i for i in movers if slope(spec, pos[i]) > 0), key=lambda i: -pos[i])
    order = lefts + rights
    solids = [o.id for o in spec.objects if not o.is_agent]

    consistent = []
    for commits in itertools.product([False, True], repeat=len(order)):
        current = list(pos)
        ok = True
        for index, commit in zip(order, commits):
            destination = current[index] + slope(spec, pos[index])
            free = 0 <= destination < spec.D and all(
                current[j] != destination for j in solids if j != index
            )
            if free != commit:
                ok = False
                break
            if commit:
                current[index] = destination
        if ok:
            consistent.append(tuple(current))
    assert len(consistent) == 1, consistent
    return GridState(consistent[0])


class DirectionTests(unittest.TestCase):
    def test_peak_and_valley_directions(self):
        peak = make_env("inclined_plane")
        valley = make_env("valley")
        self.assertEqual(direction_of(peak, 3), -1)
        self.assertEqual(direction_of(peak, 8), 1)
        self.assertEqual(direction_of(valley, 3), 1)

    def test_flat_has_no_direction(self):
        with self.assertRaises(GridEnvError) as ctx:
            direction_of(make_env("stochastic_plane"), 3)
        self.assertEqual(ctx.exception.code, "flat_direction")


class SpecValidationTests(unittest.TestCase):
    def test_default_roster(self):
        spec = make_env("inclined_plane", agent=True)
        self.assertEqual([o.name for o in spec.objects], ["red", "green", "purple", "yellow", "agent"])
        self.assertEqual(spec.D, 12)
        self.assertEqual(spec.apex, 6)
        self.assertEqual(spec.n_actions, 4)

    def test_flat_requires_stochastic_mover(self):
        with self.assertRaises(GridEnvError) as ctx:
            build_spec(6, 3, Orientation.FLAT, [False])
        self.assertEqual(ctx.exception.code, "invalid_env")

    def test_rollable_agent_is_rejected(self):
        with self.assertRaises(GridEnvError):
            EnvSpec(
                D=6,
                apex=3,
                orientation=Orientation.PEAK,
                objects=(ObjectSpec(id=0, name="agent", rollable=True, is_agent=True),),
            )

    def test_apex_must_be_interior(self):
        with self.assertRaises(GridEnvError):
            build_spec(6, 6, Orientation.PEAK, [True])


class StepExampleTests(unittest.TestCase):
    def test_non_rollable_blocks_a_rollable(self):
        spec = build_spec(12, 6, Orientation.PEAK, [False, True])
        self.assertEqual(step(spec, GridState((2, 3))).pos, (2, 3))

    def test_chain_of_rollables_advances_together(self):
        spec = build_spec(12, 6, Orientation.PEAK, [True, True])
        self.assertEqual(step(spec, GridState((2, 3))).pos, (1, 2))
        self.assertEqual(step(spec, GridState((3, 2))).pos, (2, 1))

    def test_grab_frees_a_blocked_ball(self):
        # cube, ball, agent in a valley: the ball at 6 rolls left once the cube is carried away
        spec = build_spec(12, 6, Orientation.VALLEY, [False, True], agent=True)
        after = step(spec, GridState((5, 6, 5)), Action.MOVE_LEFT_GRAB)
        self.assertEqual(after.pos, (4, 5, 4))

    def test_move_without_grab_leaves_objects(self):
        spec = build_spec(12, 6, Orientation.VALLEY, [False, True], agent=True)
        after = step(spec, GridState((5, 6, 5)), Action.MOVE_LEFT_NO_GRAB)
        self.assertEqual(after.pos, (5, 6, 4))

    def test_grab_carries_into_an_occupied_cell(self):
        spec = build_spec(12, 6, Orientation.PEAK, [False, False], agent=True)
        after = step(spec, GridState((3, 4, 3)), Action.MOVE_RIGHT_GRAB)
        self.assertEqual(after.pos, (4, 4, 4))

    def test_stacked_objects_separate_again(self):
        # cube and ball stacked at 4 on the left plane: the ball rolls off, the cube stays
        spec = build_spec(12, 6, Orientation.PEAK, [False, True], agent=True)
        after = step(spec, GridState((4, 4, 4)), Action.MOVE_RIGHT_NO_GRAB)
        self.assertEqual(after.pos, (4, 3, 5))

    def test_grab_lifts_the_lowest_index_of_a_stack(self):
        spec = build_spec(12, 6, Orientation.PEAK, [False, False], agent=True)
        after = step(spec, GridState((4, 4, 4)), Action.MOVE_LEFT_GRAB)
        self.assertEqual(after.pos, (3, 4, 3))

    def test_agent_is_clamped_to_the_grid(self):
        spec = build_spec(6, 3, Orientation.PEAK, [False], agent=True)
        self.assertEqual(step(spec, GridState((2, 0)), Action.MOVE_LEFT_NO_GRAB).pos, (2, 0))

    def test_agent_may_share_cells(self):
        spec = build_spec(6, 3, Orientation.PEAK, [False], agent=True)
        self.assertEqual(step(spec, GridState((2, 1)), Action.MOVE_RIGHT_NO_GRAB).pos, (2, 2))

    def test_grabbed_rollable_skips_rolling(self):
        spec = build_spec(12, 6, Orientation.PEAK, [True], agent=True)
        after = step(spec, GridState((3, 3)), Action.MOVE_RIGHT_GRAB)
        self.assertEqual(after.pos, (4, 4))

    def test_valley_apex_conflict_goes_to_left_mover(self):
        spec = build_spec(12, 6, Orientation.VALLEY, [True, True])
        self.assertEqual(step(spec, GridState((5, 7))).pos, (5, 6))

    def test_action_mode_is_enforced(self):
        agent_spec = make_env("inclined_plane", agent=True)
        plain = make_env("inclined_plane")
        state = sample_initial(agent_spec, "train", make_rng(0))
        with self.assertRaises(GridEnvError) as ctx:
            step(agent_spec, state, None)
        self.assertEqual(ctx.exception.code, "action_mode_mismatch")
        with self.assertRaises(GridEnvError):
            step(plain, GridState((0, 1, 2, 3)), Action.MOVE_LEFT_GRAB)

    def test_invalid_state_is_rejected(self):
        spec = build_spec(6, 3, Orientation.PEAK, [False, True])
        with self.assertRaises(GridEnvError) as ctx:
            step(spec, GridState((2, 2)))
        self.assertEqual(ctx.exception.code, "invalid_state")


class OracleEquivalenceTests(unittest.TestCase):
    def test_step_matches_subset_oracle_exhaustively(self):
        checked = 0
        for D in range(2, 7):
            for apex in range(1, D):
                for orientation in (Orientation.PEAK, Orientation.VALLEY):
                    for n_solid, agent in ((1, False), (2, False), (3, False), (1, True), (2, True)):
                        if n_solid > D:
                            continue
                        for flags in itertools.product([False, True], repeat=n_solid):
                            spec = build_spec(D, apex, orientation, list(flags), agent=agent)
                            actions = AGENT_ACTIONS if agent else (None,)
                            for state in valid_states(spec, shared=agent):
                                for action in actions:
                                    expected = oracle_step(spec, state, action)
                                    self.assertEqual(step(spec, state, action), expected, (spec, state, action))
                                    checked += 1
        self.assertGreater(checked, 10000)

    def test_objects_stack_only_under_a_grab(self):
        spec = make_env("valley", agent=True)
        agent = spec.agent_index
        for seed in range(50):
            episode = generate_episode(spec, "test", seed)
            self.assertEqual(len(set(episode.states[0].pos[:agent])), agent)
            for before, action, after in episode.transitions():
                self.assertTrue(all(0 <= p < spec.D for p in after.pos))
                for i, j in itertools.combinations(range(agent), 2):
                    if after.pos[i] != after.pos[j]:
                        continue
                    stacked_before = before.pos[i] == before.pos[j]
                    grabbed_here = action.grabs and after.pos[agent] == after.pos[i]
                    self.assertTrue(stacked_before or grabbed_here, (before, action, after))


class MirrorTests(unittest.TestCase):
    def test_peak_dynamics_are_mirror_symmetric(self):
        for agent in (False, True):
            spec = build_spec(6, 2, Orientation.PEAK, [True, False, True][: 2 if agent else 3], agent=agent)
            mirrored = mirror_spec(spec)
            actions = AGENT_ACTIONS if agent else (None,)
            for state in valid_states(spec):
                for action in actions:
                    direct = mirror_state(spec, step(spec, state, action))
                    reflected = step(
                        mirrored,
                        mirror_state(spec, state),
                        None if action is None else mirror_action(action),
                    )
                    self.assertEqual(direct, reflected)

    def test_valley_single_roller_is_mirror_symmetric(self):
        spec = build_spec(6, 4, Orientation.VALLEY, [True, False, False])
        mirrored = mirror_spec(spec)
        for state in valid_states(spec):
            self.assertEqual(
                mirror_state(spec, step(spec, state)),
                step(mirrored, mirror_state(spec, state)),
            )


class SamplingTests(unittest.TestCase):
    def setUp(self):
        self.spec = make_env("inclined_plane")
        self.yellow = [o.id for o in self.spec.objects if o.name == "yellow"][0]

    def test_train_split_keeps_left_only_objects_left(self):
        rng = make_rng(1)
        for _ in range(1000):
            state = sample_initial(self.spec, "train", rng)
            self.assertLess(state.pos[self.yellow], self.spec.apex)

    def test_test_split_covers_right_plane(self):
        rng = make_rng(2)
        right = sum(sample_initial(self.spec, "test", rng).pos[self.yellow] >= self.spec.apex for _ in range(1000))
        self.assertAlmostEqual(right / 1000, 0.5, delta=0.06)

    def test_objects_never_share_initial_cells(self):
        rng = make_rng(3)
        spec = make_env("valley", agent=True)
        for _ in range(1000):
            state = sample_initial(spec, "train", rng)
            self.assertEqual(len(set(state.pos[:-1])), 4)

    def test_too_few_allowed_cells(self):
        spec = make_env("inclined_plane", D=4, apex=1, objects=["purple", "yellow"])
        with self.assertRaises(GridEnvError) as ctx:
            sample_initial(spec, "train", make_rng(0))
        self.assertEqual(ctx.exception.code, "insufficient_cells")

    def test_state_tensor_is_one_hot(self):
        spec = build_spec(4, 2, Orientation.PEAK, [True, False])
        tensor = to_state_tensor(spec, GridState((2, 0)))
        np.testing.assert_array_equal(tensor[0], [0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(tensor.sum(axis=1), [1.0, 1.0])
        self.assertEqual(tuple(np.argmax(tensor, axis=1)), (2, 0))


class EpisodeTests(unittest.TestCase):
    def test_length_contract(self):
        episodes = generate_episodes(make_env("inclined_plane", agent=True), "train", 3, make_rng(5))
        for episode in episodes:
            self.assertEqual(len(episode.states), 9)
            self.assertEqual(len(episode.actions), 8)
            self.assertTrue(all(a in AGENT_ACTIONS for a in episode.actions))

    def test_same_seed_gives_identical_episodes(self):
        spec = make_env("valley", agent=True)
        first = [e.to_record() for e in generate_episodes(spec, "test", 4, make_rng(9))]
        second = [e.to_record() for e in generate_episodes(spec, "test", 4, make_rng(9))]
        self.assertEqual(first, second)

    def test_consecutive_states_follow_step(self):
        spec = make_env("inclined_plane", agent=True)
        episode = generate_episode(spec, "train", 17)
        for state, action, following in episode.transitions():
            self.assertEqual(step(spec, state, action), following)

    def test_stochastic_mover_is_fair(self):
        spec = make_env("stochastic_plane")
        rng = make_rng(4)
        state = GridState((5, 0))
        lefts = sum(step(spec, state, None, rng).pos[0] == 4 for _ in range(10000))
        self.assertAlmostEqual(lefts / 10000, 0.5, delta=0.02)

    def test_policy_must_fit_environment(self):
        with self.assertRaises(GridEnvError):
            generate_episode(make_env("inclined_plane"), "train", 0, policy="random")

    def test_episode_file_round_trip_and_field_order(self):
        spec = make_env("inclined_plane", agent=True)
        episodes = generate_episodes(spec, "train", 2, make_rng(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_episodes(Path(tmp) / "episodes.ndjson", episodes)
            lines = path.read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(lines), 2)
            self.assertEqual(list(json.loads(lines[0]).keys()), ["seed", "env", "split", "actions", "positions"])
            loaded = read_episodes(path)
        self.assertEqual([e.to_record() for e in loaded], [e.to_record() for e in episodes])


if __name__ == "__main__":
    unittest.main()
