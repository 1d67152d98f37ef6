import pytest

from conftest import write_jsonl
from data_model import (
    ANSWER_SUFFIX,
    Predicate,
    Record,
    load_table,
    parse_bool,
    render_prompt,
    string_key_to_id,
    write_table,
)
from errors import DuplicateIdError, PromptRenderError, TableFormatError


def test_render_prompt_fills_placeholders_and_appends_suffix():
    predicate = Predicate(template="Is {title} about {topic}?", instruction="You are a librarian.")
    record = Record(id=3, columns={"title": "Dune", "topic": "deserts"})

    prompt = render_prompt(predicate, record)

    assert prompt == f"You are a librarian.\nIs Dune about deserts?\n{ANSWER_SUFFIX}"


def test_render_prompt_without_instruction():
    prompt = render_prompt(Predicate(template="{a}"), Record(id=0, columns={"a": "x"}))
    assert prompt == f"x\n{ANSWER_SUFFIX}"


def test_render_prompt_missing_column_raises():
    with pytest.raises(PromptRenderError):
        render_prompt(Predicate(template="{missing}"), Record(id=0, columns={"a": "x"}))


def test_predicate_validate_against_schema():
    predicate = Predicate(template="{title} {body}")
    assert predicate.referenced_columns == ["title", "body"]
    predicate.validate(("title", "body", "label"))
    with pytest.raises(PromptRenderError):
        predicate.validate(("title",))


def test_unnamed_placeholder_is_rejected():
    with pytest.raises(PromptRenderError):
        Predicate(template="positional {}").referenced_columns


def test_load_jsonl_with_id_column(tmp_path):
    path = tmp_path / "rows.jsonl"
    write_jsonl(path, [{"id": 10, "text": "a", "flag": True}, {"id": 4, "text": "b", "flag": False}])

    table = load_table(str(path), id_column="id")

    assert table.ids() == [10, 4]
    assert table.column_schema == ("text", "flag")
    assert table.get(4).columns == {"text": "b", "flag": "False"}
    assert table.truth_labels("flag") == {10: True, 4: False}


def test_load_csv_defaults_to_row_numbers(tmp_path):
    path = tmp_path / "rows.csv"
    path.write_text('text,label\n"hello, world",true\nplain,0\n', encoding="utf-8")

    table = load_table(str(path))

    assert table.ids() == [0, 1]
    assert table.get(0).columns["text"] == "hello, world"
    assert table.truth_labels("label") == {0: True, 1: False}


def test_duplicate_id_names_the_line(tmp_path):
    path = tmp_path / "dup.jsonl"
    write_jsonl(path, [{"id": 1, "t": "a"}, {"id": 2, "t": "b"}, {"id": 1, "t": "c"}])

    with pytest.raises(DuplicateIdError) as excinfo:
        load_table(str(path), id_column="id")

    assert excinfo.value.line == 3


def test_duplicate_id_after_multiline_field_counts_physical_lines(tmp_path):
    path = tmp_path / "multi.csv"
    path.write_text('id,text\n1,"a\nb\nc"\n2,x\n1,y\n', encoding="utf-8")

    with pytest.raises(DuplicateIdError) as excinfo:
        load_table(str(path), id_column="id")

    assert excinfo.value.line == 6


def test_blank_csv_lines_still_count(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("id,t\n5,a\n\n5,b\n", encoding="utf-8")
    with pytest.raises(DuplicateIdError) as excinfo:
        load_table(str(path), id_column="id")
    assert excinfo.value.line == 4


def test_malformed_csv_reports_the_line(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("id,t\n1,a\n2,b,c\n", encoding="utf-8")
    with pytest.raises(TableFormatError) as excinfo:
        load_table(str(path))
    assert excinfo.value.line == 3
    assert excinfo.value.record_id == 1


def test_duplicate_id_in_csv_counts_the_header(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("id,t\n5,a\n5,b\n", encoding="utf-8")
    with pytest.raises(DuplicateIdError) as excinfo:
        load_table(str(path), id_column="id")
    assert excinfo.value.line == 3


def test_malformed_jsonl_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"t": "a"}\n{not json\n', encoding="utf-8")
    with pytest.raises(TableFormatError) as excinfo:
        load_table(str(path))
    assert excinfo.value.line == 2


def test_negative_id_is_rejected(tmp_path):
    path = tmp_path / "neg.jsonl"
    write_jsonl(path, [{"id": -1, "t": "a"}])
    with pytest.raises(TableFormatError):
        load_table(str(path), id_column="id")


def test_empty_csv_gives_empty_table(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    table = load_table(str(path))
    assert len(table) == 0
    assert table.ids() == []


def test_unknown_suffix_needs_explicit_format(tmp_path):
    path = tmp_path / "rows.txt"
    path.write_text("a\n1\n", encoding="utf-8")
    with pytest.raises(TableFormatError):
        load_table(str(path))
    assert load_table(str(path), table_format="csv").ids() == [0]


def test_hashed_string_keys(tmp_path):
    path = tmp_path / "keys.jsonl"
    write_jsonl(path, [{"key": "alpha", "t": "a"}, {"key": "beta", "t": "b"}])

    table = load_table(str(path), id_column="key", hash_ids=True)

    assert table.ids() == [string_key_to_id("alpha"), string_key_to_id("beta")]
    assert 0 <= string_key_to_id("alpha") < 2**64


@pytest.mark.parametrize("suffix", [".jsonl", ".csv"])
def test_write_then_load_preserves_records(tmp_path, reviews_table, suffix):
    path = tmp_path / f"out{suffix}"

    write_table(reviews_table, str(path))
    loaded = load_table(str(path), id_column="id")

    assert loaded.ids() == reviews_table.ids()
    for record in reviews_table:
        assert loaded.get(record.id).columns == record.columns


def test_parse_bool():
    assert parse_bool("TRUE") is True
    assert parse_bool(" 0 ") is False
    with pytest.raises(TableFormatError):
        parse_bool("maybe")
