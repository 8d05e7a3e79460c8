#include <doctest.h>

#include "synthetic.hpp"
#include "vlmq/dataset.hpp"
#include "vlmq/error.hpp"
#include "vlmq/random.hpp"

using namespace vlmq;

namespace {

VisualInstance open_instance(std::string id, std::vector<std::string> answers) {
  VisualInstance v;
  v.id = std::move(id);
  v.question = "What color are the pants?";
  v.kind = DatasetKind::open_ended;
  v.gold.annotations = std::move(answers);
  return v;
}

std::vector<std::string> repeat(std::string a, int n, std::string b = "", int m = 0) {
  std::vector<std::string> out(n, a);
  out.insert(out.end(), m, b);
  return out;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("load_dataset keeps file order and reports malformed lines") {
    synth::TempDir dir("dataset");
    write_text_file(dir / "d.jsonl",
                    "{\"id\":\"a\",\"image\":\"a.png\",\"question\":\"Q1?\",\"choices\":[\"x\",\"y\"],\"correct_choice_idx\":0}\n"
                    "{\"id\":\"b\",\"image\":\"b.png\",\"question\":\"Q2?\",\"choices\":[\"x\",\"y\"],\"correct_choice_idx\":1}\n"
                    "{not json\n"
                    "{\"id\":\"c\",\"image\":\"c.png\",\"question\":\"Q3?\",\"choices\":[\"x\",\"y\"],\"correct_choice_idx\":1}\n");
    auto load = load_dataset(dir / "d.jsonl", DatasetKind::multiple_choice);
    REQUIRE(load.instances.size() == 3);
    CHECK(load.instances[0].id == "a");
    CHECK(load.instances[2].id == "c");
    REQUIRE(load.errors.size() == 1);
    CHECK(load.errors[0].line == 3);
  }

  TEST_CASE("load_dataset limit truncates to the first valid instances") {
    synth::TempDir dir("dataset");
    auto path = synth::write_mc_dataset(dir.path(), 12);
    CHECK(load_dataset(path, DatasetKind::multiple_choice, 5).instances.size() == 5);
    CHECK(load_dataset(path, DatasetKind::multiple_choice, 0).instances.empty());
    CHECK(load_dataset(path, DatasetKind::multiple_choice).instances.size() == 12);
  }

  TEST_CASE("records missing required fields or with empty choices are errors") {
    synth::TempDir dir("dataset");
    write_text_file(dir / "d.jsonl",
                    "{\"image\":\"a.png\",\"question\":\"Q1?\",\"choices\":[\"x\"],\"correct_choice_idx\":0}\n"
                    "{\"id\":\"b\",\"image\":\"b.png\",\"choices\":[\"x\"],\"correct_choice_idx\":0}\n"
                    "{\"id\":\"c\",\"image\":\"c.png\",\"question\":\"Q?\",\"choices\":[],\"correct_choice_idx\":0}\n");
    auto load = load_dataset(dir / "d.jsonl", DatasetKind::multiple_choice);
    CHECK(load.instances.empty());
    CHECK(load.errors.size() == 3);
    CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl", DatasetKind::multiple_choice), InputError);
  }

  TEST_CASE("open-ended records accept plain and object annotations") {
    synth::TempDir dir("dataset");
    write_text_file(dir / "v.jsonl",
                    "{\"id\":\"v1\",\"image\":\"v.png\",\"question\":\"Color?\",\"answers\":[{\"answer\":\"pink\"},\"pink\"]}\n"
                    "{\"id\":\"v2\",\"image\":\"v.png\",\"question\":\"Color?\",\"answers\":[]}\n");
    auto load = load_dataset(dir / "v.jsonl", DatasetKind::open_ended);
    REQUIRE(load.instances.size() == 1);
    CHECK(load.instances[0].gold.annotations->size() == 2);
    CHECK(load.errors.size() == 1);
  }

  TEST_CASE("write_dataset round-trips and emits an error sidecar") {
    synth::TempDir dir("dataset");
    auto load = load_dataset(synth::write_mc_dataset(dir.path(), 4), DatasetKind::multiple_choice);
    write_dataset(dir / "out.jsonl", load.instances, {{7, "bad record"}});
    auto again = load_dataset(dir / "out.jsonl", DatasetKind::multiple_choice);
    REQUIRE(again.instances.size() == 4);
    CHECK(again.instances[3].gold.correct_choice == load.instances[3].gold.correct_choice);
    CHECK(std::filesystem::exists(dir / "out.jsonl.errors.jsonl"));
  }

  TEST_CASE("filter_open_ended drops unanswerable majorities and excluded ids") {
    auto keep = open_instance("keep", repeat("pink", 7, "red", 3));
    auto drop = open_instance("drop", repeat("unanswerable", 6, "pink", 4));
    auto tie = open_instance("tie", repeat("Unanswerable.", 5, "pink", 5));
    auto banned = open_instance("banned", repeat("pink", 10));
    CHECK(majority_annotation(keep) == "pink");
    CHECK(majority_annotation(tie) == "unanswerable");
    auto out = filter_open_ended({keep, drop, tie, banned}, {"banned"});
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "keep");
    CHECK(filter_open_ended(out, {"banned"}).size() == 1);
  }

  TEST_CASE("grade_prediction for multiple choice normalizes the answer") {
    VisualInstance v;
    v.id = "icing";
    v.kind = DatasetKind::multiple_choice;
    v.choices = {"butter", "mayo", "ice cream", "icing"};
    v.gold.correct_choice = "icing";
    CHECK(grade_prediction(v, "Icing."));
    CHECK(grade_prediction(v, "  ICING "));
    CHECK_FALSE(grade_prediction(v, "ice cream"));
  }

  TEST_CASE("grade_prediction for open-ended needs three matching annotations") {
    CHECK(grade_prediction(open_instance("p", repeat("pink", 10)), "pink"));
    CHECK_FALSE(grade_prediction(open_instance("p", repeat("pink", 2, "red", 8)), "pink"));
    CHECK(grade_prediction(open_instance("p", repeat("pink", 3, "red", 7)), "Pink!"));
  }

  TEST_CASE("grading is invariant under case and trailing punctuation") {
    Rng rng(3);
    const std::vector<std::string> words{"pink", "red", "blue"};
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::string> ann;
      for (int i = 0; i < 10; ++i) ann.push_back(words[rng.index(3)]);
      auto inst = open_instance("x", ann);
      auto w = words[rng.index(3)];
      std::string shouted = w;
      for (auto& c : shouted) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      CHECK(grade_prediction(inst, w) == grade_prediction(inst, shouted + "."));
    }
  }
}
