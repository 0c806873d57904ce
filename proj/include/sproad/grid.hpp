#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace sproad {

// Dense row-major H x W x D array. Channels are innermost.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, int depth, T fill = T{})
      : rows_(rows), cols_(cols), depth_(depth),
        values_(static_cast<std::size_t>(rows) * cols * depth, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int depth() const { return depth_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t index(int r, int c, int k = 0) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_ && k >= 0 && k < depth_);
    return (static_cast<std::size_t>(r) * cols_ + c) * depth_ + k;
  }

  T& operator()(int r, int c, int k = 0) { return values_[index(r, c, k)]; }
  const T& operator()(int r, int c, int k = 0) const { return values_[index(r, c, k)]; }

  // All channels of one cell.
  std::span<T> cell(int r, int c) { return {values_.data() + index(r, c), static_cast<std::size_t>(depth_)}; }
  std::span<const T> cell(int r, int c) const {
    return {values_.data() + index(r, c), static_cast<std::size_t>(depth_)};
  }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  bool same_shape(const Grid& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && depth_ == other.depth_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int depth_ = 0;
  std::vector<T> values_;
};

}  // namespace sproad
