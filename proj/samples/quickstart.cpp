// Library walk-through: synthesize a dataset, train one stream, localize the
// test videos and report mAP on the THUMOS grid.

#include <cstdio>
#include <iostream>

#include "facnet/pipeline.hpp"
#include "facnet/trainer.hpp"

int main() {
  using namespace facnet;

  SynthConfig sc;
  sc.seed = 7;
  const auto syn = generate_synthetic(sc);
  const auto& data = syn.dataset;

  ModelConfig mc;
  mc.num_classes = data.classes.size();
  mc.feature_dim = sc.feature_dim;
  mc.embed_dims = {128, 128};

  TrainConfig tc;
  tc.epochs = 20;
  tc.seed = 11;

  FitOptions opts;
  opts.on_epoch = [](const EpochReport& r) {
    if (r.epoch % 5 == 0) std::printf("epoch %2zu  total loss %.4f\n", r.epoch, r.total);
  };
  const auto fitted = fit<float>(training_samples(data, 0), mc, tc, LossWeights{}, opts);

  const std::vector<StreamModel<float>> models{{mc, fitted.params}};
  const auto detections = detect(data.split(Split::Test), models, mc.num_classes, LocalizeConfig{});
  const auto report = map_report(detections, data.ground_truth(Split::Test), thumos_grid(), mc.num_classes);
  std::cout << detections.size() << " detections\n" << report.table(data.classes);
  return 0;
}
