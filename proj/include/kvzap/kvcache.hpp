#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/numerics.hpp"

namespace kvzap {

using Position = std::int64_t;

inline constexpr int kDefaultBlockSize = 16;

struct HeadStats {
  int layer = 0;
  int head = 0;
  std::size_t appended = 0;
  std::size_t live = 0;
  std::size_t evicted = 0;
  std::size_t resident_blocks = 0;
};

inline double compression_factor_of(double removed_fraction) {
  return removed_fraction >= 1.0 ? std::numeric_limits<double>::infinity()
                                 : 1.0 / (1.0 - removed_fraction);
}

// Integer accounting snapshot of a cache. Ratio accessors throw when nothing
// was ever appended.
struct CacheStats {
  std::vector<HeadStats> heads;
  std::size_t appended_total = 0;
  std::size_t live_total = 0;
  std::size_t evicted_total = 0;
  std::size_t resident_blocks_total = 0;
  std::size_t free_blocks = 0;
  std::size_t live_bytes = 0;
  std::size_t resident_bytes = 0;

  double removed_fraction() const {
    require(appended_total > 0, ErrorKind::undefined, "removed fraction of an empty cache");
    return static_cast<double>(evicted_total) / static_cast<double>(appended_total);
  }
  double compression_factor() const { return compression_factor_of(removed_fraction()); }
  std::size_t fragmentation_bytes() const { return resident_bytes - live_bytes; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["heads"] = nlohmann::json::array();
    for (const auto& h : heads) {
      j["heads"].push_back({{"layer", h.layer},
                            {"head", h.head},
                            {"appended", h.appended},
                            {"live", h.live},
                            {"evicted", h.evicted},
                            {"resident_blocks", h.resident_blocks}});
    }
    j["appended_total"] = appended_total;
    j["live_total"] = live_total;
    j["evicted_total"] = evicted_total;
    j["free_blocks"] = free_blocks;
    j["live_bytes"] = live_bytes;
    j["resident_bytes"] = resident_bytes;
    if (appended_total > 0) {
      j["removed_fraction"] = removed_fraction();
      const double f = compression_factor();
      j["compression_factor"] = std::isfinite(f) ? nlohmann::json(f) : nlohmann::json(nullptr);
    }
    return j;
  }
};

template <typename T>
struct GatheredHead {
  std::vector<Position> positions;
  MatrixR<T> keys;    // live x D
  MatrixR<T> values;  // live x D
};

// Per-(layer, kv-head) variable-length KV store on fixed-size blocks drawn from
// one shared pool. Slots are never compacted: a block goes back to the free
// list only once every entry in it is dead.
template <typename T>
class PagedKvCache {
 public:
  PagedKvCache(int layers, int heads, int head_dim, int block_size = kDefaultBlockSize)
      : layers_(layers), heads_(heads), head_dim_(head_dim), block_size_(block_size),
        head_state_(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads)) {
    require(layers > 0 && heads > 0 && head_dim > 0, ErrorKind::config, "cache dimensions must be positive");
    require(block_size > 0, ErrorKind::config, "block size must be positive");
  }

  int layers() const { return layers_; }
  int heads() const { return heads_; }
  int head_dim() const { return head_dim_; }
  int block_size() const { return block_size_; }

  // One past the largest position appended to any head.
  Position next_position() const { return next_position_; }
  bool empty() const { return appended_total_ == 0; }

  void append(int layer, int head, Position position, std::span<const T> key, std::span<const T> value) {
    auto& hs = state(layer, head);
    require(position > hs.last_position, ErrorKind::ordering,
            "position " + std::to_string(position) + " not after " + std::to_string(hs.last_position) +
                " for layer " + std::to_string(layer) + " head " + std::to_string(head));
    require(key.size() == static_cast<std::size_t>(head_dim_) && value.size() == key.size(),
            ErrorKind::dimension, "key/value length must equal head_dim");
    if (hs.table.empty() || blocks_[hs.table.back()].used == block_size_) hs.table.push_back(allocate());
    Block& b = blocks_[hs.table.back()];
    const auto slot = static_cast<std::size_t>(b.used++);
    b.positions[slot] = position;
    b.alive[slot] = 1;
    ++b.live;
    std::copy(key.begin(), key.end(), b.keys.begin() + static_cast<std::ptrdiff_t>(slot * head_dim_));
    std::copy(value.begin(), value.end(), b.values.begin() + static_cast<std::ptrdiff_t>(slot * head_dim_));
    hs.last_position = position;
    ++hs.appended;
    ++hs.live;
    ++appended_total_;
    next_position_ = std::max(next_position_, position + 1);
  }

  // Removes the listed positions; unknown or already-dead positions are skipped.
  // Returns how many entries were actually evicted.
  std::size_t evict(int layer, int head, std::span<const Position> positions) {
    auto& hs = state(layer, head);
    std::size_t count = 0;
    for (Position p : positions) {
      auto [bi, slot] = locate(hs, p);
      if (bi < 0) continue;
      Block& b = blocks_[hs.table[static_cast<std::size_t>(bi)]];
      b.alive[static_cast<std::size_t>(slot)] = 0;
      --b.live;
      --hs.live;
      ++hs.evicted;
      ++count;
      if (b.live == 0) {
        free_list_.push_back(hs.table[static_cast<std::size_t>(bi)]);
        hs.table.erase(hs.table.begin() + bi);
      }
    }
    evicted_total_ += count;
    return count;
  }

  std::size_t evict(int layer, int head, std::initializer_list<Position> positions) {
    return evict(layer, head, std::span<const Position>(positions.begin(), positions.size()));
  }

  GatheredHead<T> gather(int layer, int head) const {
    const auto& hs = state(layer, head);
    GatheredHead<T> g;
    g.positions.reserve(hs.live);
    g.keys.resize(static_cast<Eigen::Index>(hs.live), head_dim_);
    g.values.resize(static_cast<Eigen::Index>(hs.live), head_dim_);
    Eigen::Index row = 0;
    for (int id : hs.table) {
      const Block& b = blocks_[static_cast<std::size_t>(id)];
      for (int s = 0; s < b.used; ++s) {
        if (!b.alive[static_cast<std::size_t>(s)]) continue;
        g.positions.push_back(b.positions[static_cast<std::size_t>(s)]);
        const auto off = static_cast<std::size_t>(s) * static_cast<std::size_t>(head_dim_);
        for (int d = 0; d < head_dim_; ++d) {
          g.keys(row, d) = b.keys[off + static_cast<std::size_t>(d)];
          g.values(row, d) = b.values[off + static_cast<std::size_t>(d)];
        }
        ++row;
      }
    }
    return g;
  }

  std::vector<Position> live_positions(int layer, int head) const {
    const auto& hs = state(layer, head);
    std::vector<Position> out;
    out.reserve(hs.live);
    for (int id : hs.table) {
      const Block& b = blocks_[static_cast<std::size_t>(id)];
      for (int s = 0; s < b.used; ++s)
        if (b.alive[static_cast<std::size_t>(s)]) out.push_back(b.positions[static_cast<std::size_t>(s)]);
    }
    return out;
  }

  std::size_t live(int layer, int head) const { return state(layer, head).live; }
  std::size_t appended(int layer, int head) const { return state(layer, head).appended; }
  std::size_t evicted(int layer, int head) const { return state(layer, head).evicted; }
  std::size_t resident_blocks(int layer, int head) const { return state(layer, head).table.size(); }
  std::vector<int> block_ids(int layer, int head) const { return state(layer, head).table; }
  std::size_t free_blocks() const { return free_list_.size(); }
  std::size_t pool_blocks() const { return blocks_.size(); }

  std::size_t entry_bytes() const { return 2 * static_cast<std::size_t>(head_dim_) * sizeof(T); }

  CacheStats stats() const {
    CacheStats s;
    for (int l = 0; l < layers_; ++l) {
      for (int h = 0; h < heads_; ++h) {
        const auto& hs = state(l, h);
        s.heads.push_back({l, h, hs.appended, hs.live, hs.evicted, hs.table.size()});
        s.live_total += hs.live;
        s.resident_blocks_total += hs.table.size();
      }
    }
    s.appended_total = appended_total_;
    s.evicted_total = evicted_total_;
    s.free_blocks = free_list_.size();
    s.live_bytes = s.live_total * entry_bytes();
    s.resident_bytes = s.resident_blocks_total * static_cast<std::size_t>(block_size_) * entry_bytes();
    return s;
  }

 private:
  struct Block {
    std::vector<Position> positions;
    std::vector<std::uint8_t> alive;
    std::vector<T> keys;
    std::vector<T> values;
    int used = 0;
    int live = 0;
  };

  struct HeadState {
    std::vector<int> table;  // block ids in position order
    Position last_position = -1;
    std::size_t appended = 0;
    std::size_t live = 0;
    std::size_t evicted = 0;
  };

  HeadState& state(int layer, int head) {
    check_index(layer, head);
    return head_state_[static_cast<std::size_t>(layer * heads_ + head)];
  }
  const HeadState& state(int layer, int head) const {
    check_index(layer, head);
    return head_state_[static_cast<std::size_t>(layer * heads_ + head)];
  }
  void check_index(int layer, int head) const {
    require(layer >= 0 && layer < layers_ && head >= 0 && head < heads_, ErrorKind::dimension,
            "cache index (" + std::to_string(layer) + ", " + std::to_string(head) + ") out of range");
  }

  int allocate() {
    if (!free_list_.empty()) {
      const int id = free_list_.back();
      free_list_.pop_back();
      Block& b = blocks_[static_cast<std::size_t>(id)];
      b.used = 0;
      b.live = 0;
      std::fill(b.alive.begin(), b.alive.end(), std::uint8_t{0});
      return id;
    }
    Block b;
    const auto bs = static_cast<std::size_t>(block_size_);
    b.positions.assign(bs, -1);
    b.alive.assign(bs, 0);
    b.keys.assign(bs * static_cast<std::size_t>(head_dim_), T(0));
    b.values.assign(bs * static_cast<std::size_t>(head_dim_), T(0));
    blocks_.push_back(std::move(b));
    return static_cast<int>(blocks_.size() - 1);
  }

  // (index into the head's table, slot) of a live entry, or (-1, -1).
  std::pair<std::ptrdiff_t, int> locate(const HeadState& hs, Position p) const {
    auto it = std::upper_bound(hs.table.begin(), hs.table.end(), p, [this](Position v, int id) {
      return v < blocks_[static_cast<std::size_t>(id)].positions[0];
    });
    if (it == hs.table.begin()) return {-1, -1};
    --it;
    const Block& b = blocks_[static_cast<std::size_t>(*it)];
    const auto end = b.positions.begin() + b.used;
    const auto pos = std::lower_bound(b.positions.begin(), end, p);
    if (pos == end || *pos != p) return {-1, -1};
    const int slot = static_cast<int>(pos - b.positions.begin());
    if (!b.alive[static_cast<std::size_t>(slot)]) return {-1, -1};
    return {it - hs.table.begin(), slot};
  }

  int layers_;
  int heads_;
  int head_dim_;
  int block_size_;
  std::vector<HeadState> head_state_;
  std::vector<Block> blocks_;
  std::vector<int> free_list_;
  std::size_t appended_total_ = 0;
  std::size_t evicted_total_ = 0;
  Position next_position_ = 0;
};

}  // namespace kvzap
