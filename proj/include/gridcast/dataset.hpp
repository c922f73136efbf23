#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

inline constexpr Index kChannelsPerFrame = 8;   // (volume, speed) x (NE, SE, SW, NW)
inline constexpr Index kStaticChannels = 9;     // density + 8 neighbor connections
inline constexpr Index kInputFrames = 12;
inline constexpr Index kWindowBins = 24;        // input hour + 1 h horizon
inline constexpr Index kBinsPerDay = 288;
inline constexpr Index kLatestStartBin = 240;   // 20:00
inline constexpr std::array<Index, 6> kLeadOffsets{12, 13, 14, 17, 20, 23};  // +5..+60 min
inline constexpr Index kInputChannels = kInputFrames * kChannelsPerFrame + kStaticChannels;  // 105
inline constexpr Index kOutputChannels = static_cast<Index>(kLeadOffsets.size()) * kChannelsPerFrame;  // 48

/// Neighbor order of static channels 1..8.
enum class Neighbor { n, ne, e, se, s, sw, w, nw };
inline constexpr std::array<std::array<int, 2>, 8> kNeighborOffsets{
    {{-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};

struct TrafficMovie {
  std::string city_id;
  int day_index = 0;
  Tensor<std::uint8_t> frames;  // (T, H, W, 8)

  Index bins() const { return frames.dim(0); }
};

struct StaticMap {
  std::string city_id;
  Tensor<std::uint8_t> channels;  // (9, H, W)
};

struct WindowIndex {
  std::vector<Index> valid_starts;
};

/// Starts t with t + 23 <= T - 1 and t <= latest_start_cap.
WindowIndex build_window_index(Index bins, Index latest_start_cap = kLatestStartBin);

template <typename Scalar>
struct Sample {
  Tensor<Scalar> input;   // (105, H, W) in [0, 1]
  Tensor<Scalar> target;  // (48, H, W) in [0, 1]
  std::string city_id;
  Index t = 0;
};

/// Builds a sample from the 24 frames starting at the window start; `window`
/// is (24, H, W, 8).
template <typename Scalar>
Sample<Scalar> assemble_window(const Tensor<std::uint8_t>& window, const StaticMap& static_map) {
  if (window.rank() != 4 || window.dim(0) < kWindowBins || window.dim(3) != kChannelsPerFrame) {
    throw ShapeError("assemble: window must be (>=24,H,W,8), got " + to_string(window.shape()));
  }
  const Index h = window.dim(1), w = window.dim(2), hw = h * w;
  const auto& st = static_map.channels;
  if (st.rank() != 3 || st.dim(0) != kStaticChannels || st.dim(1) != h || st.dim(2) != w) {
    throw ShapeError("assemble: static map " + to_string(st.shape()) + " does not match movie grid");
  }
  constexpr Scalar scale = Scalar(1) / Scalar(255);
  Sample<Scalar> s;
  s.input = Tensor<Scalar>::uninitialized({kInputChannels, h, w});
  s.target = Tensor<Scalar>::uninitialized({kOutputChannels, h, w});
  auto put_frame = [&](Tensor<Scalar>& dst, Index slot, Index frame) {
    const std::uint8_t* src = window.data() + frame * hw * kChannelsPerFrame;
    Scalar* out = dst.data() + slot * kChannelsPerFrame * hw;
    for (Index p = 0; p < hw; ++p) {
      for (Index c = 0; c < kChannelsPerFrame; ++c) out[c * hw + p] = Scalar(src[p * kChannelsPerFrame + c]) * scale;
    }
  };
  for (Index f = 0; f < kInputFrames; ++f) put_frame(s.input, f, f);
  for (std::size_t l = 0; l < kLeadOffsets.size(); ++l) put_frame(s.target, static_cast<Index>(l), kLeadOffsets[l]);
  Scalar* out = s.input.data() + kInputFrames * kChannelsPerFrame * hw;
  for (Index i = 0; i < st.size(); ++i) out[i] = Scalar(st[i]) * scale;
  s.city_id = static_map.city_id;
  return s;
}

/// Row slice [first, first + count) of a (T, ...) tensor.
Tensor<std::uint8_t> slice_rows(const Tensor<std::uint8_t>& t, Index first, Index count);

template <typename Scalar>
Sample<Scalar> assemble_sample(const TrafficMovie& movie, const StaticMap& static_map, Index t,
                               Index latest_start_cap = kLatestStartBin) {
  const Index last = std::min(latest_start_cap, movie.bins() - kWindowBins);
  if (t < 0 || t > last) {
    throw std::out_of_range("assemble_sample: start " + std::to_string(t) + " outside valid starts [0, " +
                            std::to_string(last) + "]");
  }
  Sample<Scalar> s = assemble_window<Scalar>(slice_rows(movie.frames, t, kWindowBins), static_map);
  s.t = t;
  return s;
}

/// Converts a (48, H, W) channel-first prediction into movie layout (6, H, W, 8).
template <typename Scalar>
Tensor<Scalar> to_frames(const Tensor<Scalar>& channels) {
  const Index leads = channels.dim(0) / kChannelsPerFrame, h = channels.dim(1), w = channels.dim(2), hw = h * w;
  auto out = Tensor<Scalar>::uninitialized({leads, h, w, kChannelsPerFrame});
  for (Index l = 0; l < leads; ++l) {
    for (Index c = 0; c < kChannelsPerFrame; ++c) {
      const Scalar* src = channels.data() + (l * kChannelsPerFrame + c) * hw;
      Scalar* dst = out.data() + l * hw * kChannelsPerFrame + c;
      for (Index p = 0; p < hw; ++p) dst[p * kChannelsPerFrame] = src[p];
    }
  }
  return out;
}

/// Frames [t, t + 12) of a movie as reals in byte scale, (12, H, W, 8).
Tensor<double> input_frames(const Tensor<std::uint8_t>& window);
/// Ground-truth frames at the six lead offsets in byte scale, (6, H, W, 8).
Tensor<double> target_frames(const Tensor<std::uint8_t>& window);

// On-disk movies and static maps.

std::filesystem::path movie_path(const std::filesystem::path& root, const std::string& city, int year, int day);
std::filesystem::path static_path(const std::filesystem::path& root, const std::string& city);

void write_movie(const std::filesystem::path& path, const TrafficMovie& movie);
TrafficMovie read_movie(const std::filesystem::path& path);
void write_static(const std::filesystem::path& path, const StaticMap& map);
StaticMap read_static(const std::filesystem::path& path);

/// Reads the 24-bin window starting at t without loading the whole day.
Tensor<std::uint8_t> read_window(const std::filesystem::path& movie_file, Index t);

}  // namespace gridcast
