#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ksi/error.hpp"

namespace ksi {

// Inclusive pixel rectangle. Empty when x1 < x0 or y1 < y0.
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x1 < x0 || y1 < y0; }
  int w() const { return empty() ? 0 : x1 - x0 + 1; }
  int h() const { return empty() ? 0 : y1 - y0 + 1; }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

  friend PixelBox unite(const PixelBox& a, const PixelBox& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  }
  friend PixelBox intersect(const PixelBox& a, const PixelBox& b) {
    return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

// Binary image over a width x height pixel grid. Only a rectangular window
// (the crop) is stored; every pixel outside it is 0.
class Bitmap {
 public:
  Bitmap() = default;
  Bitmap(int width, int height) : width_(width), height_(height) { check_dims(width, height); }
  Bitmap(int width, int height, PixelBox crop) : Bitmap(width, height) { reset_crop(clip(crop)); }

  int width() const { return width_; }
  int height() const { return height_; }
  const PixelBox& crop() const { return crop_; }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  bool at(int x, int y) const { return crop_.contains(x, y) && data_[local(x, y)] != 0; }

  void set(int x, int y, bool v = true) {
    if (!in_bounds(x, y)) throw ValidationError("pixel outside image", "bitmap");
    if (!crop_.contains(x, y)) {
      if (!v) return;
      grow(unite(crop_, PixelBox{x, y, x, y}));
    }
    data_[local(x, y)] = v ? 1 : 0;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }
  bool none() const { return count() == 0; }

  bool same_shape(const Bitmap& o) const { return width_ == o.width_ && height_ == o.height_; }

  // Tight bounding box of the set pixels (empty box when none are set).
  PixelBox bounding_box() const {
    PixelBox b{crop_.x1 + 1, crop_.y1 + 1, crop_.x0 - 1, crop_.y0 - 1};
    bool any = false;
    for (int y = crop_.y0; y <= crop_.y1; ++y)
      for (int x = crop_.x0; x <= crop_.x1; ++x)
        if (data_[local(x, y)]) {
          any = true;
          b.x0 = std::min(b.x0, x);
          b.y0 = std::min(b.y0, y);
          b.x1 = std::max(b.x1, x);
          b.y1 = std::max(b.y1, y);
        }
    return any ? b : PixelBox{};
  }

  template <class Fn>
  void for_each_set(Fn&& fn) const {
    for (int y = crop_.y0; y <= crop_.y1; ++y)
      for (int x = crop_.x0; x <= crop_.x1; ++x)
        if (data_[local(x, y)]) fn(x, y);
  }

  // Alternating run lengths over the full row-major pixel sequence, starting
  // with a (possibly zero-length) run of zeros.
  std::vector<std::uint32_t> rle() const {
    std::vector<std::uint32_t> runs;
    bool current = false;
    std::uint32_t len = 0;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const bool v = at(x, y);
        if (v != current) {
          runs.push_back(len);
          current = v;
          len = 0;
        }
        ++len;
      }
    runs.push_back(len);
    return runs;
  }

  static Bitmap from_rle(int width, int height, const std::vector<std::uint32_t>& runs) {
    Bitmap b(width, height);
    const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
    std::uint64_t pos = 0;
    bool on = false;
    PixelBox box;
    for (auto r : runs) {
      if (pos + r > total) throw ValidationError("runs exceed image size", "rle");
      if (on && r > 0) {
        const int ya = static_cast<int>(pos / width), yb = static_cast<int>((pos + r - 1) / width);
        const int xa = ya == yb ? static_cast<int>(pos % width) : 0;
        const int xb = ya == yb ? static_cast<int>((pos + r - 1) % width) : width - 1;
        box = unite(box, PixelBox{xa, ya, xb, yb});
      }
      pos += r;
      on = !on;
    }
    if (pos != total) throw ValidationError("runs do not cover the image", "rle");
    b.reset_crop(box);
    pos = 0;
    on = false;
    for (auto r : runs) {
      if (on)
        for (std::uint64_t p = pos; p < pos + r; ++p)
          b.set(static_cast<int>(p % width), static_cast<int>(p / width));
      pos += r;
      on = !on;
    }
    return b;
  }

  // Pixel-content equality (crops may differ).
  friend bool operator==(const Bitmap& a, const Bitmap& b) {
    if (!a.same_shape(b)) return false;
    const PixelBox u = unite(a.crop_, b.crop_);
    for (int y = u.y0; y <= u.y1; ++y)
      for (int x = u.x0; x <= u.x1; ++x)
        if (a.at(x, y) != b.at(x, y)) return false;
    return true;
  }

 private:
  static void check_dims(int w, int h) {
    if (w <= 0 || h <= 0) throw ValidationError("bitmap dimensions must be positive", "bitmap");
  }
  PixelBox clip(const PixelBox& b) const { return intersect(b, PixelBox{0, 0, width_ - 1, height_ - 1}); }
  std::size_t local(int x, int y) const {
    return static_cast<std::size_t>(y - crop_.y0) * static_cast<std::size_t>(crop_.w()) +
           static_cast<std::size_t>(x - crop_.x0);
  }
  void reset_crop(const PixelBox& b) {
    crop_ = b.empty() ? PixelBox{} : b;
    data_.assign(static_cast<std::size_t>(crop_.w()) * static_cast<std::size_t>(crop_.h()), 0);
  }
  void grow(const PixelBox& b) {
    Bitmap bigger(width_, height_, b);
    for_each_set([&](int x, int y) { bigger.data_[bigger.local(x, y)] = 1; });
    *this = std::move(bigger);
  }

  int width_ = 0;
  int height_ = 0;
  PixelBox crop_;
  std::vector<std::uint8_t> data_;
};

// 3x3 closing (dilation then erosion). Pixels outside the image count as set
// during erosion, so the closing never eats into the border.
inline Bitmap close3(const Bitmap& in) {
  const PixelBox box = in.bounding_box();
  if (box.empty()) return in;
  const PixelBox work = intersect(PixelBox{box.x0 - 2, box.y0 - 2, box.x1 + 2, box.y1 + 2},
                                  PixelBox{0, 0, in.width() - 1, in.height() - 1});
  Bitmap dil(in.width(), in.height(), work);
  for (int y = work.y0; y <= work.y1; ++y)
    for (int x = work.x0; x <= work.x1; ++x) {
      bool v = false;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx) v = in.at(x + dx, y + dy);
      dil.set(x, y, v);
    }
  Bitmap out(in.width(), in.height(), work);
  for (int y = work.y0; y <= work.y1; ++y)
    for (int x = work.x0; x <= work.x1; ++x) {
      bool v = true;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1 && v; ++dx) v = !in.in_bounds(x + dx, y + dy) || dil.at(x + dx, y + dy);
      out.set(x, y, v);
    }
  return out;
}

}  // namespace ksi
