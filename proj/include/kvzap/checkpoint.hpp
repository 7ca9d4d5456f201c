#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kvzap/container.hpp"
#include "kvzap/model.hpp"

namespace kvzap {

// Teacher checkpoint: header {"kind": "teacher", "config": {...}, "tensors": [names]},
// tensors in Weights::for_each order.
inline Container teacher_container(const Weights<float>& w) {
  Container c;
  c.magic = std::string(magic::kTeacher);
  c.header["kind"] = "teacher";
  c.header["config"] = w.config.to_json();
  c.header["tensors"] = nlohmann::json::array();
  w.for_each([&](const std::string& name, const Tensor<float>& t) {
    c.header["tensors"].push_back(name);
    c.tensors.push_back(t);
  });
  return c;
}

inline std::string encode_checkpoint(const Weights<float>& w) { return encode_container(teacher_container(w)); }

inline Weights<float> decode_checkpoint(std::string_view bytes) {
  Container c = decode_container(bytes, magic::kTeacher);
  require(c.header.contains("config"), ErrorKind::validation, "checkpoint header lacks a config");
  const ModelConfig config = ModelConfig::from_json(c.header["config"]);
  Weights<float> w = Weights<float>::empty_like(config);
  std::size_t expected = 0;
  w.for_each([&](const std::string&, Tensor<float>&) { ++expected; });
  require(c.tensors.size() == expected, ErrorKind::validation,
          "checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, config implies " +
              std::to_string(expected));
  std::size_t i = 0;
  w.for_each([&](const std::string& name, Tensor<float>& t) {
    require(c.tensors[i].shape() == t.shape(), ErrorKind::validation,
            name + ": stored shape " + shape_string(c.tensors[i].shape()) + " does not match config " +
                shape_string(t.shape()));
    t = std::move(c.tensors[i++]);
  });
  validate_weights(w);
  return w;
}

inline void save_checkpoint(const Weights<float>& w, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(w));
}

inline Weights<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace kvzap
