#include <gtest/gtest.h>

#include <fstream>

#include "gridcast/dataset.hpp"
#include "gridcast/tensor_io.hpp"
#include "test_util.hpp"

using namespace gridcast;
using gridcast::testing::random_tensor;
using gridcast::testing::TempDir;
using U8 = Tensor<std::uint8_t>;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

U8 random_u8(const Shape& shape, std::mt19937_64& rng) {
  U8 t(shape);
  std::uniform_int_distribution<int> d(0, 255);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<std::uint8_t>(d(rng));
  return t;
}

template <typename T>
bool same_entry(const AnyTensor& a, const AnyTensor& b) {
  return std::holds_alternative<Tensor<T>>(b) && std::get<Tensor<T>>(a) == std::get<Tensor<T>>(b);
}

}  // namespace

TEST(TensorFile, RoundTripAllDtypes) {
  TempDir dir("gct");
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> ext(1, 5), rank(1, 4);
    auto shape = [&] {
      Shape s(static_cast<std::size_t>(rank(rng)));
      for (auto& e : s) e = ext(rng);
      return s;
    };
    const TensorMap m{{"bytes", random_u8(shape(), rng)},
                      {"single", random_tensor<float>(shape(), rng)},
                      {"double.w", random_tensor<double>(shape(), rng)}};
    write_tensor_file(dir / "t.gct", m);
    const TensorMap r = read_tensor_file(dir / "t.gct");
    ASSERT_EQ(r.size(), 3u);
    EXPECT_TRUE(same_entry<std::uint8_t>(m.at("bytes"), r.at("bytes")));
    EXPECT_TRUE(same_entry<float>(m.at("single"), r.at("single")));
    EXPECT_TRUE(same_entry<double>(m.at("double.w"), r.at("double.w")));
  }
}

TEST(TensorFile, EmptyMap) {
  TempDir dir("gct");
  write_tensor_file(dir / "e.gct", {});
  EXPECT_TRUE(read_tensor_file(dir / "e.gct").empty());
  EXPECT_EQ(std::filesystem::file_size(dir / "e.gct"), 8u);
}

TEST(TensorFile, FaultInjection) {
  TempDir dir("gct");
  std::mt19937_64 rng(2);
  write_tensor_file(dir / "a.gct", {{"a", random_tensor<double>({4, 4}, rng)}});
  const std::string good = slurp(dir / "a.gct");

  dump(dir / "trunc.gct", good.substr(0, good.size() - 9));
  EXPECT_THROW(read_tensor_file(dir / "trunc.gct"), TruncatedFileError);
  dump(dir / "short.gct", good.substr(0, 6));
  EXPECT_THROW(read_tensor_file(dir / "short.gct"), TruncatedFileError);

  std::string bad = good;
  bad[0] = 'X';
  dump(dir / "magic.gct", bad);
  EXPECT_THROW(read_tensor_file(dir / "magic.gct"), BadMagicError);

  bad = good;
  bad[4 + 4 + 2 + 1] = 9;  // magic, count, name length, "a", then dtype
  dump(dir / "dtype.gct", bad);
  EXPECT_THROW(read_tensor_file(dir / "dtype.gct"), UnknownDTypeError);
}

TEST(TensorFile, RowReadsAndDigest) {
  TempDir dir("gct");
  std::mt19937_64 rng(3);
  const U8 t = random_u8({10, 3, 2, 8}, rng);
  write_tensor_file(dir / "m.gct", {{"frames", t}});
  EXPECT_EQ(read_u8_rows(dir / "m.gct", "frames", 4, 3), slice_rows(t, 4, 3));
  EXPECT_THROW(read_u8_rows(dir / "m.gct", "frames", 8, 3), std::exception);
  const auto d = content_digest(dir / "m.gct");
  write_tensor_file(dir / "n.gct", {{"frames", t}});
  EXPECT_EQ(content_digest(dir / "n.gct"), d);
  EXPECT_EQ(hex_digest(d).size(), 16u);
}

TEST(WindowIndex, Counts) {
  EXPECT_EQ(build_window_index(288, 240).valid_starts.size(), 241u);
  EXPECT_EQ(build_window_index(36, 240).valid_starts.size(), 13u);
  EXPECT_EQ(build_window_index(288, 287).valid_starts.size(), 265u);
  EXPECT_THROW(build_window_index(35, 240), std::invalid_argument);
  for (Index bins = 36; bins <= 300; bins += 7) {
    for (Index cap : {0, 5, 100, 240, 400}) {
      const auto idx = build_window_index(bins, cap);
      std::size_t brute = 0;
      for (Index t = 0; t < bins; ++t) brute += (t + 23 <= bins - 1 && t <= cap);
      EXPECT_EQ(idx.valid_starts.size(), brute);
      EXPECT_EQ(static_cast<Index>(idx.valid_starts.size()), std::min(cap, bins - 24) + 1);
      EXPECT_TRUE(std::is_sorted(idx.valid_starts.begin(), idx.valid_starts.end()));
    }
  }
}

namespace {

TrafficMovie random_movie(Index bins, Index h, Index w, std::mt19937_64& rng) {
  return TrafficMovie{"c", 0, random_u8({bins, h, w, 8}, rng)};
}

}  // namespace

TEST(Sample, ConstantMovieScalesToOne) {
  const TrafficMovie movie{"c", 0, U8::constant({40, 3, 4, 8}, 255)};
  const StaticMap st{"c", U8::constant({9, 3, 4}, 255)};
  const auto s = assemble_sample<double>(movie, st, 5);
  EXPECT_EQ(s.input, Tensor<double>::constant({105, 3, 4}, 1.0));
  EXPECT_EQ(s.target, Tensor<double>::constant({48, 3, 4}, 1.0));
}

TEST(Sample, LayoutOracle) {
  std::mt19937_64 rng(4);
  const Index h = 5, w = 6, t = 9;
  const TrafficMovie movie = random_movie(60, h, w, rng);
  const StaticMap st{"c", random_u8({9, h, w}, rng)};
  const auto s = assemble_sample<double>(movie, st, t);
  const auto& f = movie.frames;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index k = 0; k < 12; ++k)
        for (Index c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(s.input(k * 8 + c, y, x), f(t + k, y, x, c) / 255.0);
      for (Index c = 0; c < 9; ++c) EXPECT_DOUBLE_EQ(s.input(96 + c, y, x), st.channels(c, y, x) / 255.0);
      const Index offsets[6] = {12, 13, 14, 17, 20, 23};
      for (Index l = 0; l < 6; ++l)
        for (Index c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(s.target(l * 8 + c, y, x), f(t + offsets[l], y, x, c) / 255.0);
    }
  }
}

TEST(Sample, LosslessAndRangeChecked) {
  std::mt19937_64 rng(5);
  const TrafficMovie movie = random_movie(40, 4, 4, rng);
  const StaticMap st{"c", random_u8({9, 4, 4}, rng)};
  const auto s = assemble_sample<float>(movie, st, 16);
  for (Index k = 0; k < 12; ++k)
    for (Index c = 0; c < 8; ++c)
      for (Index p = 0; p < 16; ++p)
        EXPECT_EQ(std::lround(s.input(k * 8 + c, p / 4, p % 4) * 255.0f), movie.frames(16 + k, p / 4, p % 4, c));
  EXPECT_THROW(assemble_sample<float>(movie, st, 17), std::out_of_range);
  EXPECT_THROW(assemble_sample<float>(movie, st, -1), std::out_of_range);
  EXPECT_THROW(assemble_sample<float>(movie, StaticMap{"c", U8({9, 3, 4})}, 0), ShapeError);
}

TEST(Sample, ToFramesInvertsChannelLayout) {
  std::mt19937_64 rng(6);
  const TrafficMovie movie = random_movie(30, 3, 5, rng);
  const StaticMap st{"c", U8({9, 3, 5})};
  const auto s = assemble_sample<double>(movie, st, 2);
  Tensor<double> expect = target_frames(slice_rows(movie.frames, 2, 24));
  expect.array() /= 255.0;
  EXPECT_LE((to_frames(s.target).array() - expect.array()).abs().maxCoeff(), 1e-15);
}

TEST(MovieFiles, RoundTripAndWindowRead) {
  TempDir dir("movie");
  std::mt19937_64 rng(7);
  TrafficMovie movie = random_movie(50, 4, 3, rng);
  const auto p = movie_path(dir.path(), "c", 2019, 3);
  std::filesystem::create_directories(p.parent_path());
  write_movie(p, movie);
  EXPECT_EQ(read_movie(p).frames, movie.frames);
  EXPECT_EQ(read_window(p, 20), slice_rows(movie.frames, 20, 24));
  const StaticMap st{"c", random_u8({9, 4, 3}, rng)};
  write_static(static_path(dir.path(), "c"), st);
  EXPECT_EQ(read_static(static_path(dir.path(), "c")).channels, st.channels);
}
