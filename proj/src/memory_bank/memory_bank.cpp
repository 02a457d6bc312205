#include "tempo/memory_bank.hpp"

#include <cmath>

namespace tempo {

template <typename T>
double patch_cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError("similarity needs equal [P×d] features, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto ad = a.data();
  auto bd = b.data();
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = ad[r * cols + c], y = bd[r * cols + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (na > 0 && nb > 0) total += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return total / static_cast<double>(rows);
}

template <typename T>
MemoryBank<T>::MemoryBank(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ValidationError("memory bank capacity must be positive");
}

template <typename T>
void MemoryBank<T>::ingest(const Tensor<T>& frame, long frame_index) {
  if (last_index_ && frame_index <= *last_index_) {
    throw ValidationError("frame index " + std::to_string(frame_index) +
                          " does not follow previous index " + std::to_string(*last_index_));
  }
  if (frame.rank() != 2) throw DimensionError("bank frames must be [P×d], got " + shape_str(frame.shape()));
  if (!entries_.empty() && entries_.front().feature.shape() != frame.shape()) {
    throw DimensionError("bank frame shape " + shape_str(frame.shape()) + " differs from " +
                         shape_str(entries_.front().feature.shape()));
  }
  last_index_ = frame_index;
  ++frames_;
  entries_.push_back({frame, 1, frame_index, frame_index});
  if (entries_.size() > capacity_) compress();
}

template <typename T>
void MemoryBank<T>::compress() {
  if (entries_.size() != capacity_ + 1) {
    throw ValidationError("compress() expects " + std::to_string(capacity_ + 1) + " entries, have " +
                          std::to_string(entries_.size()));
  }
  std::size_t best = 0;
  double best_sim = -INFINITY;
  for (std::size_t i = 0; i + 1 < entries_.size(); ++i) {
    double s = patch_cosine_similarity(entries_[i].feature, entries_[i + 1].feature);
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  auto& left = entries_[best];
  const auto& right = entries_[best + 1];
  const double total = static_cast<double>(left.weight + right.weight);
  const T wl = static_cast<T>(static_cast<double>(left.weight) / total);
  const T wr = static_cast<T>(static_cast<double>(right.weight) / total);
  left.feature = add(scale(left.feature, wl), scale(right.feature, wr));
  left.weight += right.weight;
  left.last = right.last;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  merges_.push_back({best, best_sim});
}

template <typename T>
BankReadout<T> MemoryBank<T>::read() const {
  if (entries_.empty()) throw ValidationError("read() on an empty memory bank");
  BankReadout<T> out;
  std::vector<Tensor<T>> parts;
  for (const auto& e : entries_) {
    parts.push_back(e.feature);
    out.entry_positions.push_back(e.position());
    for (std::size_t p = 0; p < e.feature.dim(0); ++p) out.token_positions.push_back(e.position());
  }
  out.context = parts.size() == 1 ? parts.front() : concat(parts, 0);
  return out;
}

template <typename T>
void MemoryBank<T>::check_invariants() const {
  if (entries_.size() > capacity_) throw std::logic_error("bank exceeds its capacity");
  std::size_t weight = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.weight == 0) throw std::logic_error("bank entry with zero weight");
    if (e.first > e.last) throw std::logic_error("bank entry span is reversed");
    if (i > 0 && e.first <= entries_[i - 1].last) {
      throw std::logic_error("bank spans overlap or are out of order");
    }
    weight += e.weight;
  }
  if (weight != frames_) throw std::logic_error("bank weights do not sum to frames ingested");
}

template double patch_cosine_similarity(const Tensor<float>&, const Tensor<float>&);
template double patch_cosine_similarity(const Tensor<double>&, const Tensor<double>&);
template class MemoryBank<float>;
template class MemoryBank<double>;

}  // namespace tempo
