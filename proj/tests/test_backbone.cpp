#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "codeinv/backbone.hpp"
#include "oracles.hpp"

using namespace codeinv;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "codeinv_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Architecture arithmetic, written out independently of Backbone::output_shape.
Shape3 expected_relu_shape(int block, int height, int width) {
  const int widths[] = {64, 128, 256, 512, 512};
  int h = height, w = width;
  for (int i = 1; i < block; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return Shape3{widths[block - 1], h, w};
}

}  // namespace

TEST_CASE("layer ids cover the 37 trunk names and reject others") {
  CHECK(LayerId::all().size() == 37);
  int conv = 0, relu = 0, pool = 0;
  for (LayerId id : LayerId::all()) {
    conv += id.kind() == LayerKind::conv;
    relu += id.kind() == LayerKind::relu;
    pool += id.kind() == LayerKind::pool;
    CHECK(LayerId(id.name()) == id);
  }
  CHECK(conv == 16);
  CHECK(relu == 16);
  CHECK(pool == 5);
  CHECK(LayerId("relu5_1").block() == 5);
  CHECK(LayerId("relu1_1") < LayerId("relu5_4"));
  CHECK_THROWS_AS(LayerId("relu6_1"), std::invalid_argument);
  CHECK_THROWS_AS(LayerId("fc6"), std::invalid_argument);
  CHECK(parse_layer_list(" relu1_1, relu2_1 ,").size() == 2);
}

TEST_CASE("VGG-19 layout: 16 conv, 16 relu, 5 pool, 5504 3x3 filters") {
  const Backbone vgg = make_random_vgg19(1);
  CHECK(vgg.count(LayerKind::conv) == 16);
  CHECK(vgg.count(LayerKind::relu) == 16);
  CHECK(vgg.count(LayerKind::pool) == 5);
  CHECK(vgg.filter_count() == 5504);
  for (const Layer& l : vgg.layers())
    if (l.id.kind() == LayerKind::conv)
      CHECK(l.conv.kernel.size() == static_cast<std::size_t>(l.conv.out_channels) * l.conv.in_channels * 9);
  CHECK(vgg.channels(LayerId("relu1_2")) == 64);
  CHECK(vgg.output_shape(LayerId("relu5_1"), 224, 224) == Shape3{512, 14, 14});
  CHECK(vgg.min_input_extent(LayerId("relu5_1")) == 16);
  CHECK(vgg.min_input_extent(LayerId("pool5")) == 32);
}

TEST_CASE("forward shapes of all 16 relu layers at 224x224 follow the pooling schedule") {
  const Backbone vgg = make_random_vgg19(2);
  std::vector<LayerId> relus;
  for (LayerId id : LayerId::all())
    if (id.kind() == LayerKind::relu) relus.push_back(id);
  const CodeMap codes = vgg.extract_codes(oracle::random_image(224, 224, 5), relus);
  REQUIRE(codes.size() == 16);
  for (const auto& [id, code] : codes) {
    CHECK(code.values.shape() == expected_relu_shape(id.block(), 224, 224));
    for (double v : code.values.values()) REQUIRE(v >= 0.0);
  }
  CHECK(codes.at(LayerId("relu5_1")).values.shape() == Shape3{512, 14, 14});
  CHECK(codes.at(LayerId("relu1_2")).values.shape() == Shape3{64, 224, 224});
}

TEST_CASE("odd sizes round spatial extents up at each pool") {
  const Backbone vgg = make_random_vgg19(3);
  const CodeMap codes = vgg.extract_codes(oracle::random_image(37, 45, 1), std::vector{LayerId("relu3_1"), LayerId("pool5")});
  CHECK(codes.at(LayerId("relu3_1")).values.shape() == expected_relu_shape(3, 37, 45));
  CHECK(codes.at(LayerId("pool5")).values.shape() == Shape3{512, 2, 2});
}

TEST_CASE("extract_codes rejects empty requests, foreign layers and undersized images") {
  const Backbone toy = build_toy_backbone(0);
  const ImageBuffer img = oracle::random_image(8, 8, 0);
  CHECK_THROWS_AS(toy.extract_codes(img, std::vector<LayerId>{}), std::invalid_argument);
  CHECK_THROWS_AS(toy.extract_codes(img, std::vector{LayerId("relu3_1")}), std::invalid_argument);
  const Backbone vgg = make_random_vgg19(0);
  CHECK_THROWS_AS(vgg.extract_codes(oracle::random_image(12, 40, 0), std::vector{LayerId("relu5_1")}),
                  std::invalid_argument);
  CHECK_NOTHROW(vgg.extract_codes(oracle::random_image(16, 40, 0), std::vector{LayerId("relu4_1")}));
}

TEST_CASE("weights file round trip, determinism and error paths") {
  const auto path = temp_path("vgg_roundtrip.bin");
  const Backbone generated = make_random_vgg19(11);
  save_weights(generated, path);

  const Backbone a = load_backbone(path);
  const Backbone b = load_backbone(path);
  CHECK(a.filter_count() == 5504);
  CHECK(a.checksum().size() == 64);
  CHECK(a.checksum() == b.checksum());

  const ImageBuffer img = oracle::random_image(32, 32, 3);
  const std::vector ids{LayerId("relu2_1"), LayerId("relu4_2")};
  const CodeMap ca = a.extract_codes(img, ids);
  const CodeMap cb = b.extract_codes(img, ids);
  for (LayerId id : ids) CHECK(ca.at(id).values == cb.at(id).values);

  SUBCASE("missing file") { CHECK_THROWS_AS(load_backbone(temp_path("does_not_exist.bin")), std::runtime_error); }

  SUBCASE("truncated final conv block") {
    const auto cut = temp_path("vgg_truncated.bin");
    const auto full = std::filesystem::file_size(path);
    std::filesystem::copy_file(path, cut, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(cut, full - 512u * 512u * 9u * 4u);
    CHECK_THROWS_AS(load_backbone(cut), WeightsError);
  }

  SUBCASE("fewer convolutions than VGG-19") {
    std::vector<Layer> layers;
    for (const Layer& l : generated.layers())
      if (l.id.block() <= 4) layers.push_back(l);
    const auto partial = temp_path("vgg_partial.bin");
    save_weights(Backbone("partial", layers, Preprocess{}), partial);
    CHECK_THROWS_AS(load_backbone(partial), WeightsError);
  }

  SUBCASE("not a weights file") {
    const auto junk = temp_path("junk.bin");
    std::ofstream(junk) << "hello";
    CHECK_THROWS_AS(load_backbone(junk), WeightsError);
  }
}

TEST_CASE("toy backbone: seeded, small, rectified") {
  const Backbone a = build_toy_backbone(0);
  const Backbone b = build_toy_backbone(0);
  const Backbone c = build_toy_backbone(1);
  REQUIRE(a.layers().size() == b.layers().size());
  for (std::size_t i = 0; i < a.layers().size(); ++i) CHECK(a.layers()[i].conv.kernel == b.layers()[i].conv.kernel);
  CHECK(a.layers()[0].conv.kernel != c.layers()[0].conv.kernel);
  CHECK(a.count(LayerKind::conv) == 3);
  for (const Layer& l : a.layers())
    if (l.id.kind() == LayerKind::conv) CHECK(l.conv.out_channels <= 8);

  const CodeMap codes = a.extract_codes(oracle::random_image(8, 8, 9),
                                        std::vector{LayerId("relu1_1"), LayerId("relu1_2"), LayerId("relu2_1")});
  for (const auto& [id, code] : codes)
    for (double v : code.values.values()) CHECK(v >= 0.0);
  CHECK(codes.at(LayerId("relu2_1")).values.shape() == Shape3{8, 4, 4});
  CHECK_THROWS_AS(build_toy_backbone(0, {9}), std::invalid_argument);
  CHECK(build_toy_backbone(0, {1, 4}).channels(LayerId("relu1_1")) == 1);
}

TEST_CASE("evaluate back-propagates a code loss to the pixels") {
  const Backbone toy = build_toy_backbone(4);
  const ImageBuffer img = oracle::random_image(8, 8, 21);
  const std::vector ids{LayerId("relu1_2"), LayerId("relu2_1")};

  // loss = sum of squares at two layers; compare against central differences of the forward pass
  const CodeLoss loss = [](const CodeMap& codes, CodeGradients& grads) {
    double total = 0.0;
    for (const auto& [id, code] : codes) {
      total += code.values.squared_norm();
      for (std::size_t i = 0; i < code.values.size(); ++i) grads.at(id).values()[i] += 2.0 * code.values.values()[i];
    }
    return total;
  };
  const Evaluation eval = toy.evaluate(img, ids, loss);
  CHECK(eval.gradient.shape() == img.pixels.shape());

  Tensor3 fd(img.pixels.shape());
  ImageBuffer probe = img;
  const auto forward_loss = [&](const ImageBuffer& x) {
    double total = 0.0;
    for (const auto& [id, code] : toy.extract_codes(x, ids)) total += code.values.squared_norm();
    return total;
  };
  CHECK(forward_loss(img) == doctest::Approx(eval.loss));
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double x0 = probe.pixels.values()[i];
    probe.pixels.values()[i] = x0 + 1e-3;
    const double up = forward_loss(probe);
    probe.pixels.values()[i] = x0 - 1e-3;
    const double down = forward_loss(probe);
    probe.pixels.values()[i] = x0;
    fd.values()[i] = (up - down) / 2e-3;
  }
  CHECK(oracle::relative_error(eval.gradient, fd) < 1e-4);
}

TEST_CASE("preprocess/deprocess round trip within one 8-bit level") {
  Rgb8Image src;
  src.width = 5;
  src.height = 4;
  for (int i = 0; i < 60; ++i) src.rgb.push_back(static_cast<std::uint8_t>((i * 37) % 256));
  const Rgb8Image back = deprocess(preprocess(src, Preprocess{}));
  REQUIRE(back.rgb.size() == src.rgb.size());
  for (std::size_t i = 0; i < src.rgb.size(); ++i) CHECK(std::abs(int(back.rgb[i]) - int(src.rgb[i])) <= 1);

  const auto path = temp_path("roundtrip.png");
  write_png(path, src);
  const Rgb8Image read = read_image(path);
  CHECK(read.rgb == src.rgb);
  CHECK_THROWS_AS(read_image(temp_path("missing.png")), std::runtime_error);
  CHECK_THROWS_AS(resize(src, 0, 3), std::invalid_argument);
  CHECK(resize(src, 10, 8).width == 10);
  const auto matched = area_matched_size(src, 80);
  CHECK(matched[0] == 10);
  CHECK(matched[1] == 8);
}
