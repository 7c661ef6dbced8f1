#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cof/core/random.hpp"
#include "cof/io/png.hpp"
#include "cof/io/tensor_file.hpp"

using namespace cof;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / "cof_test_io";
  fs::create_directories(d);
  return d / name;
}
}  // namespace

TEST(TensorFile, RoundTripsFloatAndDouble) {
  Rng rng(1);
  auto f = randn<float>({2, 3, 4}, rng);
  io::save_tensor(scratch("f.cft"), f);
  EXPECT_EQ(io::load_tensor<float>(scratch("f.cft")).storage(), f.storage());
  auto d = randn<double>({5}, rng);
  io::save_tensor(scratch("d.cft"), d, io::Codec::Zlib);
  auto back = io::load_tensor<double>(scratch("d.cft"));
  EXPECT_EQ(back.shape(), d.shape());
  EXPECT_EQ(back.storage(), d.storage());
}

TEST(TensorFile, DetectsCorruption) {
  Rng rng(2);
  io::save_tensor(scratch("c.cft"), randn<float>({16}, rng));
  {
    std::fstream fh(scratch("c.cft"), std::ios::in | std::ios::out | std::ios::binary);
    fh.seekp(-3, std::ios::end);
    fh.put('\x55');
  }
  EXPECT_THROW(io::load_tensor<float>(scratch("c.cft")), IntegrityError);
  {
    std::ofstream fh(scratch("junk.cft"), std::ios::binary);
    fh << "not a tensor";
  }
  EXPECT_THROW(io::load_tensor<float>(scratch("junk.cft")), IntegrityError);
  EXPECT_THROW(io::load_tensor<float>(scratch("missing.cft")), IoError);
}

TEST(TensorFile, SpectrogramKeepsMetadata) {
  audio::ComplexSpectrogram s;
  s.freq_bins = 3;
  s.frames = 2;
  s.window_size = 4;
  s.hop = 2;
  s.sample_rate = 8000;
  s.bins = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}};
  io::save_spectrogram(scratch("s.cft"), s);
  auto t = io::load_spectrogram(scratch("s.cft"));
  EXPECT_EQ(t.freq_bins, 3);
  EXPECT_EQ(t.frames, 2);
  EXPECT_EQ(t.window_size, 4);
  EXPECT_EQ(t.hop, 2);
  EXPECT_EQ(t.sample_rate, 8000);
  for (std::size_t i = 0; i < s.bins.size(); ++i) EXPECT_EQ(t.bins[i], s.bins[i]);
  io::save_tensor(scratch("plain.cft"), Tensor<float>({2, 2}));
  EXPECT_THROW(io::load_spectrogram(scratch("plain.cft")), InvalidInput);
}

TEST(Png, RgbRoundTrip) {
  Rng rng(3);
  io::Image img{5, 4, 3, {}};
  for (int i = 0; i < 60; ++i) img.pixels.push_back(static_cast<unsigned char>(uniform_int(rng, 0, 255)));
  io::write_png(scratch("a.png"), img);
  auto back = io::read_png_rgb(scratch("a.png"));
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 4);
  EXPECT_EQ(back.pixels, img.pixels);
  auto t = io::image_to_tensor<float>(back);
  EXPECT_EQ(t.shape(), (Shape{3, 4, 5}));
  EXPECT_EQ(io::tensor_to_image(t).pixels, img.pixels);
}

TEST(Png, GreyExpandsToRgb) {
  io::Image g{2, 1, 1, {0, 200}};
  io::write_png(scratch("g.png"), g);
  auto back = io::read_png_rgb(scratch("g.png"));
  EXPECT_EQ(back.pixels, (std::vector<unsigned char>{0, 0, 0, 200, 200, 200}));
  EXPECT_THROW(io::read_png_rgb(scratch("none.png")), IoError);
}
