#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace kvzap;

TEST(Container, RoundTrip) {
  Container c;
  c.magic = "KVZL";
  c.header = {{"kind", "x"}, {"n", 3}};
  c.tensors.push_back(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6.5f}));
  c.tensors.push_back(Tensor<float>({0}));
  const auto back = decode_container(encode_container(c), "KVZL");
  EXPECT_EQ(back.header, c.header);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensors[0], c.tensors[0]);
  EXPECT_EQ(back.tensors[1].size(), 0u);
}

TEST(Container, CorruptInputIsAFormatError) {
  Container c;
  c.magic = "KVZD";
  c.tensors.push_back(Tensor<float>({4}, {1, 2, 3, 4}));
  const auto bytes = encode_container(c);
  auto expect_format = [](std::string_view b, std::string_view magic) {
    try {
      decode_container(b, magic);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
    }
  };
  expect_format(bytes, "KVZL");
  expect_format(std::string_view(bytes).substr(0, bytes.size() - 1), "KVZD");
  expect_format(bytes + "x", "KVZD");
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect_format(bad_version, "KVZD");
  c.magic = "TOOLONG";
  EXPECT_THROW(encode_container(c), Error);
}

TEST(Container, ContentHashIsGitBlobSha1) {
  EXPECT_EQ(content_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(content_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelConfig c;
  c.seed = 5;
  const auto w = init_weights<float>(c);
  const auto bytes = encode_checkpoint(w);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config, w.config);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto dir = std::filesystem::temp_directory_path() / "kvzap_ckpt_test";
  save_checkpoint(w, dir / "t.kvzl");
  EXPECT_EQ(content_hash(read_file(dir / "t.kvzl")), content_hash(bytes));
  std::filesystem::remove_all(dir);
  try {
    load_checkpoint(dir / "missing.kvzl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Checkpoint, ShapeMismatchIsValidationError) {
  ModelConfig c;
  auto cont = teacher_container(init_weights<float>(c));
  cont.tensors[0] = Tensor<float>({2, 2});
  try {
    decode_checkpoint(encode_container(cont));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}
