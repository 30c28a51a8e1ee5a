import pytest

from pdirichlet.config import (
    RunConfig,
    config_hash,
    config_text,
    parse_config,
    parse_config_text,
    with_updates,
)
from pdirichlet.errors import ConfigError


def test_defaults_applied():
    c = parse_config_text("", subcommand="sample")
    assert c == RunConfig(subcommand="sample")
    assert c.p == 3.0 and c.T == 4096 and c.lam == 1.0e-6 and c.seed == 1


def test_round_trip_through_text():
    c = parse_config_text(
        "density=rho2\nn=2048\nh=0.07\nlambda=1e-4\nsvg=true\n",
        subcommand="study-density",
    )
    again = parse_config_text(config_text(c))
    assert again == c
    assert config_hash(again) == config_hash(c)


def test_comments_and_blank_lines_ignored():
    text = "# full line comment\n\nn=99  # trailing comment\n"
    c = parse_config_text(text, subcommand="sample")
    assert c.n == 99


def test_unknown_key_named_with_line():
    with pytest.raises(ConfigError, match="line 2: unknown config key 'bogus'"):
        parse_config_text("n=10\nbogus=1\n", subcommand="sample")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("just a line\n", subcommand="sample")


def test_bad_value_type_names_key():
    with pytest.raises(ConfigError, match="config key 'n'"):
        parse_config_text("n=many\n", subcommand="sample")
    with pytest.raises(ConfigError, match="config key 'n'"):
        parse_config_text("n=2.5\n", subcommand="sample")


def test_continuum_rejects_p_below_two():
    with pytest.raises(ConfigError, match="p > d = 2 required"):
        parse_config_text("p=1.5\n", subcommand="solve-continuum")
    with pytest.raises(ConfigError, match="p > d = 2 required"):
        parse_config_text("p=1.5\n", subcommand="study-minimizers")
    # the graph route accepts any p >= 1
    c = parse_config_text("p=1.5\n", subcommand="solve-discrete")
    assert c.p == 1.5
    # p = 2 itself stays callable on the continuum route
    c = parse_config_text("p=2\n", subcommand="solve-continuum")
    assert c.p == 2.0


def test_negative_penalty_weight_rejected():
    with pytest.raises(ConfigError, match="'lambda' = -1.0 rejected"):
        parse_config_text("lambda=-1\n", subcommand="sample")


def test_T_must_be_a_perfect_square():
    assert parse_config_text("T=100\n", subcommand="sample").T == 100
    with pytest.raises(ConfigError, match="'T'"):
        parse_config_text("T=50\n", subcommand="sample")
    with pytest.raises(ConfigError, match="'T'"):
        parse_config_text("T=9\n", subcommand="sample")  # 3x3 lattice is too coarse


def test_epsilon_and_k_are_mutually_exclusive():
    assert parse_config_text("epsilon=0.1\n", subcommand="solve-discrete").epsilon == 0.1
    assert parse_config_text("k=8\n", subcommand="solve-discrete").k == 8
    with pytest.raises(ConfigError, match="mutually exclusive"):
        parse_config_text("epsilon=0.1\nk=8\n", subcommand="solve-discrete")


def test_overrides_win_over_text():
    c = parse_config_text("n=10\nh=0.5\n", subcommand="sample", overrides={"n": "20"})
    assert c.n == 20 and c.h == 0.5
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_text("", subcommand="sample", overrides={"nope": 1})


def test_none_override_means_unset():
    c = parse_config_text("n=10\n", subcommand="sample", overrides={"n": None})
    assert c.n == 10


def test_subcommand_required():
    with pytest.raises(ConfigError, match="no subcommand"):
        parse_config_text("n=10\n")


def test_parse_config_reads_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("density=rho3\nseed=7\n")
    c = parse_config(path, subcommand="density")
    assert c.density == "rho3" and c.seed == 7


def test_config_hash_distinguishes_configs():
    a = parse_config_text("", subcommand="sample")
    b = parse_config_text("seed=2\n", subcommand="sample")
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 64


def test_with_updates_revalidates():
    c = parse_config_text("", subcommand="solve-continuum")
    assert with_updates(c, seed=5).seed == 5
    with pytest.raises(ConfigError, match="p > d = 2"):
        with_updates(c, p=1.2)


def test_out_of_range_values_name_their_key():
    for text, key in (
        ("n=0\n", "n"),
        ("h=0\n", "h"),
        ("tol=0\n", "tol"),
        ("seed=-1\n", "seed"),
        ("mesh=3\n", "mesh"),
        ("points_per_patch=3\n", "points_per_patch"),
        ("beta=-0.5\n", "beta"),
        ("epsilon=0\n", "epsilon"),
        ("k=0\n", "k"),
        ("density=rho9\n", "density"),
    ):
        with pytest.raises(ConfigError, match=f"config key '{key}'"):
            parse_config_text(text, subcommand="sample")
