#pragma once

#include <optional>
#include <vector>

#include "tempo/ops.hpp"

namespace tempo {

template <typename T>
struct BankEntry {
  Tensor<T> feature;       // [P×d_v]
  std::size_t weight = 1;  // frames merged into this entry
  long first = 0;          // span of original frame indices, inclusive
  long last = 0;

  double position() const { return 0.5 * static_cast<double>(first + last); }
};

template <typename T>
struct BankReadout {
  Tensor<T> context;                   // [(entries·P)×d_v], span order
  std::vector<double> entry_positions;  // span midpoints
  std::vector<double> token_positions;  // entry position repeated per patch
};

struct MergeEvent {
  std::size_t left = 0;  // entries[left] and entries[left + 1] were merged
  double similarity = 0;
};

// Mean over patch rows of the cosine similarity between matching rows of
// two [P×d] features. Zero-norm rows count as similarity 0.
template <typename T>
double patch_cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);

// Bounded, order-preserving store of frame features. On overflow the most
// similar adjacent pair is merged by weight-proportional averaging; the
// merge is built from differentiable ops so gradients reach merged frames.
template <typename T>
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity);

  // frame [P×d_v]; frame_index must strictly increase across calls.
  void ingest(const Tensor<T>& frame, long frame_index);
  // Requires size() == capacity() + 1.
  void compress();
  BankReadout<T> read() const;

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t frames_ingested() const { return frames_; }
  const std::vector<BankEntry<T>>& entries() const { return entries_; }
  const std::vector<MergeEvent>& merges() const { return merges_; }

  // Throws std::logic_error naming the first violated invariant.
  void check_invariants() const;

 private:
  std::size_t capacity_;
  std::size_t frames_ = 0;
  std::optional<long> last_index_;
  std::vector<BankEntry<T>> entries_;
  std::vector<MergeEvent> merges_;
};

}  // namespace tempo
