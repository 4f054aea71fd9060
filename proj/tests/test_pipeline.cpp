#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <thread>

#include "fmtk/datasets.hpp"
#include "fmtk/error.hpp"
#include "fmtk/pipeline.hpp"
#include "fmtk/serialize.hpp"
#include "helpers.hpp"

using namespace fmtk;
using testing::random_tensor;

namespace {

std::shared_ptr<ReferenceBackbone> backbone() {
  return std::make_shared<ReferenceBackbone>(testing::small_backbone());
}

std::vector<TimeSeriesBatch> regression_batches(std::size_t n, std::size_t channels, std::uint64_t seed) {
  Tensor x = random_tensor({n, channels, 32}, seed);
  Tensor y(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < 32; ++t) s += x(i, c, t) * (t < 16 ? 1.0 : -1.0);
    y[i] = s / 32.0;
  }
  return make_batches(x, y, 8);
}

std::vector<TimeSeriesBatch> class_batches(std::size_t n, std::uint64_t seed) {
  DatasetSpec spec;
  spec.n_train = n;
  spec.n_test = 1;
  spec.length = 32;
  Dataset d = generate_dataset(spec, seed);
  return make_batches(d.train_x, d.train_y, 16);
}

std::vector<Tensor> snapshot(Component& c) {
  std::vector<Tensor> out;
  for (const auto& e : c.parameters()) out.push_back(e.param->value);
  return out;
}

bool unchanged(Component& c, const std::vector<Tensor>& before) {
  auto now = snapshot(c);
  if (now.size() != before.size()) return false;
  for (std::size_t i = 0; i < now.size(); ++i)
    if (!bitwise_equal(now[i], before[i])) return false;
  return true;
}

TaskConfig regression_task(std::size_t epochs = 5) {
  TaskConfig t;
  t.task = TaskKind::Regression;
  t.loss = LossKind::Mse;
  t.epochs = epochs;
  t.lr = 1e-2;
  return t;
}

TaskConfig class_task() {
  TaskConfig t;
  t.task = TaskKind::Classification;
  t.loss = LossKind::CrossEntropy;
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fmtk_pipeline_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("fresh pipeline") {
  Pipeline p(backbone());
  CHECK(p.mode() == PipelineMode::Eval);
  CHECK(p.registry_size() == 0);
  CHECK(p.decoder() == nullptr);
  auto data = regression_batches(8, 1, 1);
  CHECK_THROWS_AS(p.predict(data, regression_task()), MissingComponentError);
  CHECK(p.trainable_parameters({"backbone"}).empty());
}

TEST_CASE("pipelines sharing a frozen backbone agree") {
  auto bb = backbone();
  Pipeline a(bb), b(bb);
  a.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 16, 3}));
  b.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 16, 3}));
  Tensor x = random_tensor({4, 1, 32}, 2);
  CHECK(bitwise_equal(a.forward_eval(x), b.forward_eval(x)));
}

TEST_CASE("registration, activation and validation") {
  Pipeline p(backbone(), SeriesShape{1, 64});
  auto name = p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 128}, "head"));
  CHECK(name == "head");
  CHECK(p.decoder()->name() == "head");
  try {
    p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{1024, 1, 128}, "wide"));
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("1024") != std::string::npos);
    CHECK(msg.find("32") != std::string::npos);
  }
  CHECK(p.registry_size() == 1);
  CHECK(p.decoder()->name() == "head");
  CHECK_THROWS_AS(p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}, "head")), RegistryError);

  Pipeline q(backbone());
  q.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}, "d1"), false);
  q.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}, "d2"), false);
  CHECK(q.decoder() == nullptr);
  CHECK(q.registry_size() == 2);
  CHECK(q.registered(ComponentKind::Decoder) == std::vector<std::string>{"d1", "d2"});
}

TEST_CASE("encoder activation checks channels against the decoder") {
  Pipeline p(backbone(), SeriesShape{3, 64});
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}), false);
  CHECK_THROWS_AS(p.load_decoder("mlp"), ShapeError);
  p.add_encoder(std::make_shared<LinearChannelCombiner>(LinearChannelCombinerConfig{3, 1}));
  CHECK_NOTHROW(p.load_decoder("mlp"));
  CHECK_THROWS_AS(p.unload_encoder(), ShapeError);
  CHECK_THROWS_AS(p.add_encoder(std::make_shared<LinearChannelCombiner>(LinearChannelCombinerConfig{2, 1}, "bad")),
                  ShapeError);
  Pipeline odd(backbone(), SeriesShape{1, 60});
  CHECK_THROWS_AS(odd.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8})), ShapeError);
}

TEST_CASE("swap round trip and unknown names") {
  auto metrics = std::make_shared<MetricsCollector>();
  Pipeline p(backbone());
  p.set_metrics(metrics);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8, 1}, "d1"), false);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8, 2}, "d2"), false);
  auto data = regression_batches(16, 1, 3);
  p.load_decoder("d1");
  Tensor p1 = p.predict(data, regression_task()).predictions;
  p.load_decoder("d2");
  Tensor p2 = p.predict(data, regression_task()).predictions;
  CHECK(!bitwise_equal(p1, p2));
  double t = p.load_decoder("d1");
  CHECK(t >= 0.0);
  CHECK(bitwise_equal(p.predict(data, regression_task()).predictions, p1));
  p.load_decoder("d1");
  try {
    p.load_decoder("missing");
    FAIL("expected registry error");
  } catch (const RegistryError& e) {
    CHECK(std::string(e.what()).find("d2") != std::string::npos);
  }
  auto recs = metrics->records();
  std::size_t swaps = 0, failed = 0;
  for (const auto& r : recs) {
    if (r.phase != Phase::Swap) continue;
    ++swaps;
    failed += r.failed;
  }
  CHECK(swaps == 5);
  CHECK(failed == 1);
  CHECK(p.decoder()->name() == "d1");
}

TEST_CASE("parts validation") {
  Pipeline p(backbone());
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  auto data = regression_batches(8, 1, 4);
  try {
    p.train(data, {"foo"}, regression_task());
    FAIL("expected config error");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    for (const char* part : {"encoder", "backbone", "adapter", "decoder"}) CHECK(msg.find(part) != std::string::npos);
  }
  CHECK_THROWS_AS(p.train(data, {}, regression_task()), ConfigError);
  CHECK_THROWS_AS(p.train(data, {"adapter"}, regression_task()), MissingComponentError);
  CHECK_THROWS_AS(p.train(data, {"backbone"}, regression_task()), ConfigError);
  std::vector<TimeSeriesBatch> unlabeled{TimeSeriesBatch(random_tensor({2, 1, 32}, 5))};
  CHECK_THROWS_AS(p.train(unlabeled, {"decoder"}, regression_task()), InputError);
  TaskConfig bad = regression_task();
  bad.loss = LossKind::CrossEntropy;
  CHECK_THROWS_AS(p.train(data, {"decoder"}, bad), ConfigError);
  bad = regression_task();
  bad.epochs = 0;
  CHECK_THROWS_AS(p.train(data, {"decoder"}, bad), ConfigError);
}

TEST_CASE("fit mode trains only the decoder") {
  Pipeline p(backbone(), SeriesShape{1, 32});
  p.add_encoder(std::make_shared<IdentityEncoder>());
  p.add_adapter(LoraConfig{4, 8.0, {"q", "v"}});
  p.add_decoder(std::make_shared<LinearSvmDecoder>(SvmConfig{32, 3}));
  auto data = class_batches(60, 6);
  CHECK_THROWS_AS(p.predict(data, class_task()), StateError);
  auto bb_before = snapshot(p.backbone());
  auto ad_before = snapshot(*p.adapter());
  CHECK_THROWS_AS(p.train(data, {"decoder", "adapter"}, class_task()), ConfigError);
  TrainReport r = p.train(data, {"decoder"}, class_task());
  CHECK(r.mode == DecoderMode::Fit);
  CHECK(p.decoder()->fitted());
  CHECK(unchanged(p.backbone(), bb_before));
  CHECK(unchanged(*p.adapter(), ad_before));
  PredictResult out = p.predict(data, class_task());
  CHECK(out.predictions.size() == 60);
  for (double v : out.predictions.values()) CHECK(v == std::floor(v));
}

TEST_CASE("gradient mode updates exactly the listed parts") {
  Pipeline p(backbone(), SeriesShape{2, 32});
  p.add_encoder(std::make_shared<LinearChannelCombiner>(LinearChannelCombinerConfig{2, 1}));
  p.add_adapter(LoraConfig{4, 8.0, {"q", "v"}});
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 16}));
  auto data = regression_batches(16, 2, 7);
  auto enc0 = snapshot(*p.encoder()), ad0 = snapshot(*p.adapter()), dec0 = snapshot(*p.decoder()),
       bb0 = snapshot(p.backbone());
  p.train(data, {"encoder", "decoder", "adapter"}, regression_task(2));
  CHECK(!unchanged(*p.encoder(), enc0));
  CHECK(!unchanged(*p.adapter(), ad0));
  CHECK(!unchanged(*p.decoder(), dec0));
  CHECK(unchanged(p.backbone(), bb0));
  CHECK(p.mode() == PipelineMode::Eval);

  auto enc1 = snapshot(*p.encoder()), ad1 = snapshot(*p.adapter()), dec1 = snapshot(*p.decoder());
  p.train(data, {"adapter"}, regression_task(2));
  CHECK(unchanged(*p.encoder(), enc1));
  CHECK(unchanged(*p.decoder(), dec1));
  CHECK(!unchanged(*p.adapter(), ad1));
  CHECK(unchanged(p.backbone(), bb0));
}

TEST_CASE("unfrozen backbone trains when listed") {
  auto bb = backbone();
  bb->set_frozen(false);
  Pipeline p(bb);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  auto bb0 = snapshot(*bb);
  auto dec0 = snapshot(*p.decoder());
  p.train(regression_batches(8, 1, 8), {"backbone"}, regression_task(1));
  CHECK(!unchanged(*bb, bb0));
  CHECK(unchanged(*p.decoder(), dec0));
}

TEST_CASE("gradient training lowers the loss") {
  Pipeline p(backbone());
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 32}));
  TaskConfig t;
  t.task = TaskKind::Regression;
  t.epochs = 10;
  TrainReport r = p.train(regression_batches(64, 1, 9), {"decoder"}, t);
  REQUIRE(r.epoch_losses.size() == 10);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
  CHECK(r.steps == 80);
}

TEST_CASE("predict is eval mode, aligned and deterministic") {
  Pipeline p(backbone());
  p.add_adapter(LoraConfig{4, 8.0, {"q"}, 0.5});
  for (auto& s : p.adapter()->sites()) s.b.value = random_tensor(s.b.value.shape(), 10, 0.5);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 2, 8}));
  auto data = regression_batches(20, 1, 11);
  PredictResult a = p.predict(data, regression_task());
  PredictResult b = p.predict(data, regression_task());
  CHECK(a.predictions.shape() == Shape{20, 2});
  CHECK(bitwise_equal(a.predictions, b.predictions));
  CHECK(a.batch_latency_s.size() == data.size());
  REQUIRE(a.targets);
  CHECK(a.targets->dim(0) == 20);
  Tensor row7 = p.forward_eval(data[0].values());
  for (std::size_t j = 0; j < 2; ++j) CHECK(row7(7, j) == a.predictions(7, j));
}

TEST_CASE("identity encoder does not change predictions") {
  auto bb = backbone();
  Pipeline with(bb), without(bb);
  with.add_encoder(std::make_shared<IdentityEncoder>());
  with.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  without.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  auto data = regression_batches(10, 1, 12);
  CHECK(bitwise_equal(with.predict(data, regression_task()).predictions,
                      without.predict(data, regression_task()).predictions));
}

TEST_CASE("window encoder predictions are per item") {
  Pipeline p(backbone(), SeriesShape{1, 40});
  p.add_encoder(std::make_shared<WindowEncoder>(WindowConfig{32, 4}));
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  Tensor x = random_tensor({6, 1, 40}, 13);
  Tensor y = random_tensor({6, 1}, 14);
  auto data = make_batches(x, y, 3);
  CHECK(p.predict(data, regression_task()).predictions.shape() == Shape{6, 1});
  CHECK_NOTHROW(p.train(data, {"decoder"}, regression_task(1)));
}

TEST_CASE("swap closure against fresh pipelines") {
  auto bb = backbone();
  Pipeline p(bb, SeriesShape{1, 32});
  p.add_encoder(std::make_shared<IdentityEncoder>("id"), false);
  p.add_adapter(LoraConfig{4, 8.0, {"q"}, 0.0, 5}, "l1", false);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8, 1}, "a"), false);
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8, 2}, "b"), false);
  for (auto& s : std::static_pointer_cast<LoraAdapter>(p.component(ComponentKind::Adapter, "l1"))->sites())
    s.b.value = random_tensor(s.b.value.shape(), 15, 0.5);
  Tensor x = random_tensor({5, 1, 32}, 16);

  auto fresh = [&](bool enc, bool ad, const std::string& dec) {
    Pipeline f(bb, SeriesShape{1, 32});
    if (enc) f.add_component(p.component(ComponentKind::Encoder, "id"));
    if (ad) f.add_component(p.component(ComponentKind::Adapter, "l1"));
    f.add_component(p.component(ComponentKind::Decoder, dec));
    return f.forward_eval(x);
  };
  const char* steps[] = {"dec:a", "ad", "dec:b", "enc", "dec:a", "noad", "dec:b", "noenc", "ad", "dec:a"};
  bool enc = false, ad = false;
  for (const char* s : steps) {
    std::string step = s;
    if (step == "enc") p.load_encoder("id"), enc = true;
    if (step == "noenc") p.unload_encoder(), enc = false;
    if (step == "ad") p.load_adapter("l1"), ad = true;
    if (step == "noad") p.unload_adapter(), ad = false;
    if (step.rfind("dec:", 0) == 0) p.load_decoder(step.substr(4));
    CHECK(bitwise_equal(p.forward_eval(x), fresh(enc, ad, p.decoder()->name())));
  }
}

TEST_CASE("component round trip through files") {
  auto bb = backbone();
  Pipeline p(bb, SeriesShape{3, 32});
  p.add_encoder(std::make_shared<LinearChannelCombiner>(LinearChannelCombinerConfig{3, 1}, "lcc"));
  p.add_adapter(LoraConfig{4, 8.0, {"q", "v"}}, "lora");
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8, 4}, "mlp"));
  auto data = [&] {
    Tensor x = random_tensor({12, 3, 32}, 17);
    return make_batches(x, random_tensor({12, 1}, 18), 6);
  }();
  p.train(data, {"encoder", "adapter", "decoder"}, regression_task(2));
  Tensor before = p.predict(data, regression_task()).predictions;

  p.save_component(ComponentKind::Encoder, "lcc", temp_path("lcc.fmtk"));
  p.save_component(ComponentKind::Adapter, "lora", temp_path("lora.fmtk"));
  p.save_component(ComponentKind::Decoder, "mlp", temp_path("mlp.fmtk"));
  p.save_component(ComponentKind::Backbone, bb->name(), temp_path("bb.fmtk"));

  auto bb2 = std::static_pointer_cast<Backbone>(load_component(temp_path("bb.fmtk"), ComponentKind::Backbone));
  CHECK(bb2->frozen());
  Pipeline q(bb2, SeriesShape{3, 32});
  q.add_from_file(temp_path("lcc.fmtk"), ComponentKind::Encoder);
  q.add_from_file(temp_path("lora.fmtk"), ComponentKind::Adapter);
  q.add_from_file(temp_path("mlp.fmtk"), ComponentKind::Decoder);
  CHECK(bitwise_equal(q.predict(data, regression_task()).predictions, before));
  CHECK_THROWS_AS(q.add_from_file(temp_path("lcc.fmtk"), ComponentKind::Decoder), FormatError);
}

TEST_CASE("fitted decoders round trip") {
  auto bb = backbone();
  Pipeline p(bb);
  auto data = class_batches(48, 19);
  p.add_decoder(std::make_shared<KnnDecoder>(KnnConfig{32, 3, 3}, "knn"), false);
  p.add_decoder(std::make_shared<LogisticDecoder>(LogisticConfig{32, 3, 0.5, 50}, "lr"), false);
  p.add_decoder(std::make_shared<LinearSvmDecoder>(SvmConfig{32, 3, 1.0, 0.01, 50}, "svm"), false);
  for (const char* name : {"knn", "lr", "svm"}) {
    p.load_decoder(name);
    p.train(data, {"decoder"}, class_task());
    Tensor out = p.forward_eval(data[0].values());
    p.save_component(ComponentKind::Decoder, name, temp_path(std::string(name) + ".fmtk"));
    Pipeline q(bb);
    q.add_from_file(temp_path(std::string(name) + ".fmtk"), ComponentKind::Decoder);
    CHECK(q.decoder()->fitted());
    CHECK(bitwise_equal(q.forward_eval(data[0].values()), out));
  }
  Tensor rx = random_tensor({30, 32}, 20), ry = random_tensor({30, 1}, 21);
  auto ridge = std::make_shared<RidgeDecoder>(RidgeConfig{32, 1, 0.1}, "ridge");
  ridge->fit(rx, ry);
  save_component(*ridge, temp_path("ridge.fmtk"));
  auto back = std::dynamic_pointer_cast<Decoder>(load_component(temp_path("ridge.fmtk")));
  REQUIRE(back);
  CHECK(bitwise_equal(back->forward(Var(rx), ForwardContext::eval()).value(),
                      ridge->forward(Var(rx), ForwardContext::eval()).value()));
}

TEST_CASE("corrupted checkpoints are rejected") {
  MLPDecoder d({4, 2, 3, 5}, "d");
  auto bytes = encode_component(d);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FMTK");
  CHECK_NOTHROW(decode_component(bytes));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_component(flipped), ChecksumError);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 9);
  CHECK_THROWS_AS(decode_component(truncated), ChecksumError);
  CHECK_THROWS_AS(decode_component(std::vector<std::uint8_t>{'F', 'M'}), ChecksumError);

  {
    std::ofstream out(temp_path("trunc.fmtk"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(truncated.data()), static_cast<std::streamsize>(truncated.size()));
  }
  Pipeline p(backbone());
  CHECK_THROWS_AS(p.add_from_file(temp_path("trunc.fmtk"), ComponentKind::Decoder), ChecksumError);
  CHECK(p.registry_size() == 0);
  CHECK(p.decoder() == nullptr);
}

TEST_CASE("f32 storage rounds values") {
  MLPDecoder d({4, 2, 3, 5}, "d");
  save_component(d, temp_path("f32.fmtk"), StoragePrecision::F32);
  auto back = std::dynamic_pointer_cast<MLPDecoder>(load_component(temp_path("f32.fmtk")));
  REQUIRE(back);
  CHECK(bitwise_equal(back->w1().value, d.w1().value.cast<float>().cast<double>()));
  CHECK(std::filesystem::file_size(temp_path("f32.fmtk")) < encode_component(d).size());
}

TEST_CASE("checkpoint header layout") {
  IdentityEncoder e("enc");
  auto bytes = encode_component(e);
  CHECK(bytes[4] == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 3);
  CHECK(std::string(bytes.begin() + 11, bytes.begin() + 14) == "enc");
  auto again = encode_component(e);
  CHECK(bytes == again);
}

TEST_CASE("concurrent predicts share the pipeline") {
  Pipeline p(backbone());
  p.add_decoder(std::make_shared<MLPDecoder>(MLPDecoderConfig{32, 1, 8}));
  auto data = regression_batches(32, 1, 22);
  Tensor ref = p.predict(data, regression_task()).predictions;
  Tensor a, b;
  std::thread t1([&] { a = p.predict(data, regression_task()).predictions; });
  std::thread t2([&] { b = p.predict(data, regression_task()).predictions; });
  t1.join();
  t2.join();
  CHECK(bitwise_equal(a, ref));
  CHECK(bitwise_equal(b, ref));
}
