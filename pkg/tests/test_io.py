import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grouptree.config import ConfigError, ModelConfig
from grouptree.io import (
    ParseError,
    TreeValidationError,
    load_scene,
    load_tree,
    save_scene,
    save_tree,
    scene_from_csv,
    scene_to_csv,
    tree_from_json,
    tree_to_json,
)
from grouptree.model import ActivityLabel, ActivityTree, Scene, validate_tree
from grouptree.render import group_boxes, render_svg
from grouptree.simulate import (
    ScenarioSpec,
    leaf,
    nested_meeting_tree,
    node,
    scripted_scene,
    seq,
)

A = ActivityLabel


def test_one_actor_two_frames(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("frame,actor,x,y\n1,4,0.5,1.0\n2,4,0.75,1.5\n")
    scene = load_scene(path)
    assert scene.shape == (1, 2) and scene.actor_ids == (4,)
    np.testing.assert_array_equal(scene.positions[0], [[0.5, 1.0], [0.75, 1.5]])


def test_scene_round_trip_on_random_scenes(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        j, f = int(rng.integers(1, 6)), int(rng.integers(1, 30))
        ids = tuple(sorted(rng.choice(100, j, replace=False).tolist()))
        scene = Scene(ids, rng.normal(scale=10 ** rng.uniform(-3, 3), size=(j, f, 2)))
        path = tmp_path / f"{i}.csv"
        save_scene(scene, path)
        back = load_scene(path)
        assert back.actor_ids == scene.actor_ids
        assert np.abs(back.positions - scene.positions).max() <= 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 2), elements=st.floats(-1e6, 1e6)))
def test_scene_text_round_trip_is_exact(pos):
    scene = Scene((1, 2), pos)
    assert scene_from_csv(scene_to_csv(scene)).positions.tobytes() == scene.positions.tobytes()


def test_missing_frame_is_named():
    scene = Scene((1, 2), np.zeros((2, 9, 2)))
    text = "\n".join(line for line in scene_to_csv(scene).splitlines() if not line.startswith("7,2,"))
    with pytest.raises(ParseError, match="actor 2 is missing frame 7") as err:
        scene_from_csv(text, "scene.csv")
    assert err.value.line is not None


@pytest.mark.parametrize("body, line", [
    ("1,1,0,0\n1,1,0.5,0\n", 3),
    ("1,1,0,0\n2,1,zero,0\n", 3),
    ("1,1,0,0\n2,1,0\n", 3),
    ("1,1,0,nan\n", 2),
])
def test_malformed_rows_report_their_line(body, line):
    with pytest.raises(ParseError) as err:
        scene_from_csv("frame,actor,x,y\n" + body)
    assert err.value.line == line


def test_bad_header_and_empty_file():
    with pytest.raises(ParseError):
        scene_from_csv("t,a,x,y\n1,1,0,0\n")
    with pytest.raises(ParseError):
        scene_from_csv("frame,actor,x,y\n")


def test_minimal_tree_round_trips_byte_stably(tmp_path):
    t = ActivityTree(node("FFA", 1, 3, {1}, seq("FFA_ROLE", leaf("WALK", 1, 3, {1}, id=1))), 1, 3)
    text = tree_to_json(t)
    assert tree_to_json(tree_from_json(text)) == text
    save_tree(t, tmp_path / "t.json")
    assert (tmp_path / "t.json").read_text() == text
    assert load_tree(tmp_path / "t.json") == t


def test_nested_meeting_fixture_loads_valid(fixtures_dir):
    tree = load_tree(fixtures_dir / "nested_meeting_tree.json")
    assert validate_tree(tree) == []
    assert tree == nested_meeting_tree()


def test_truncated_tree_is_a_parse_error(fixtures_dir):
    text = (fixtures_dir / "nested_meeting_tree.json").read_text()
    with pytest.raises(ParseError):
        tree_from_json(text[: len(text) // 2])


def test_schema_errors_name_the_node():
    text = tree_to_json(nested_meeting_tree()).replace('"STAND"', '"SIT"')
    with pytest.raises(ParseError, match="node 5"):
        tree_from_json(text)


def test_invalid_tree_reports_node_ids():
    bad = ActivityTree(node("FFA", 1, 4, {1}, seq("FFA_ROLE", leaf("WALK", 1, 3, {1}, id=8))), 1, 4)
    with pytest.raises(TreeValidationError, match="node 8") as err:
        tree_from_json(tree_to_json(bad))
    assert err.value.violations


def test_render_without_tree_draws_trajectories_only():
    scene = Scene((1, 2, 3), np.random.default_rng(0).normal(size=(3, 5, 2)))
    svg = render_svg(scene)
    assert svg.count("<polyline") == 3 and 'class="group"' not in svg


def test_render_is_deterministic_and_boxes_groups():
    scene, tree = scripted_scene(ScenarioSpec("SYNTH2", seed=1), ModelConfig())
    a, b = render_svg(scene, tree), render_svg(scene, tree)
    assert a == b
    assert a.count("<polyline") == 5
    assert a.count('class="group"') == sum(len(group_boxes(scene, tree, f)) for f in (1, 10, 20))
    colors = {line.split('stroke="')[1][:7] for line in a.splitlines() if line.startswith("<polyline")}
    assert len(colors) == 5


def test_synth2_render_converges():
    scene, tree = scripted_scene(ScenarioSpec("SYNTH2", seed=1), ModelConfig())
    final = scene.positions[:, -1]
    start = scene.positions[:, 0]
    spread = lambda p: np.linalg.norm(p - p.mean(axis=0), axis=1).max()
    assert spread(final) < 0.25 * spread(start)
    assert frozenset({1, 2, 3, 4}) in {members for members, _, _ in group_boxes(scene, tree, 20)}


def test_config_round_trip_is_idempotent(tmp_path):
    cfg = ModelConfig()
    cfg.sigma[A.WALK] = 0.7
    cfg.sampler.iterations = 123
    text = cfg.dumps()
    again = ModelConfig.loads(text)
    assert again.dumps() == text
    cfg.save(tmp_path / "c.txt")
    assert ModelConfig.load(tmp_path / "c.txt").dumps() == text


def test_config_file_overrides_defaults():
    cfg = ModelConfig.loads("sigma.RUN = 2.5\n")
    assert cfg.sigma[A.RUN] == 2.5 and cfg.sigma[A.WALK] == ModelConfig().sigma[A.WALK]


@pytest.mark.parametrize("text", ["sigma.WALK = 0.01\n", "sigma.WALK\n", "nonsense.key = 3\n", "alpha.MEET = -1\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ModelConfig.loads(text)
