from alpha import shortest


def test_single_edge():
    assert shortest({"a": [("b", 2)]}, "a") == {"a": 0, "b": 2}
