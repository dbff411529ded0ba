#include <iostream>

#include "CLI11.hpp"
#include "dmt/commands.hpp"
#include "dmt/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"detector-free 3d single object tracker on point clouds"};
  app.require_subcommand(1);

  dmt::GenDataArgs gd;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a tracklet dataset");
  gen->add_option("--config", gd.config, "run configuration file")->required();
  gen->add_option("--out", gd.out, "output dataset path")->required();
  gen->add_option("--seed", gd.seed, "override the configured seed");
  gen->add_option("--tracklets", gd.tracklets, "number of tracklets to generate");

  dmt::TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train the tracker on a dataset");
  train->add_option("--data", tr.data, "training dataset")->required();
  train->add_option("--out", tr.out, "output model path")->required();
  train->add_option("--config", tr.config, "run configuration file")->required();
  train->add_option("--resume", tr.resume, "checkpoint to continue from");
  train->add_flag("--mpm-only", tr.mpm_only, "train only the motion prediction module");
  train->add_flag("--tracker-only", tr.tracker_only, "skip the motion module phase");

  dmt::TrackArgs tk;
  CLI::App* track = app.add_subcommand("track", "run the tracker over a dataset");
  track->add_option("--model", tk.model, "trained model file")->required();
  track->add_option("--data", tk.data, "dataset to track")->required();
  track->add_option("--out", tk.out, "output predictions path")->required();
  track->add_option("--config", tk.config, "run configuration file")->required();

  dmt::EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "score predictions against a dataset");
  eval->add_option("--pred", ev.pred, "predictions file from track")->required();
  eval->add_option("--data", ev.data, "dataset with ground truth")->required();
  eval->add_option("--records", ev.records, "also write machine-readable metric records");

  dmt::AblateArgs ab;
  CLI::App* ablate = app.add_subcommand("ablate", "sweep one design axis and tabulate");
  ablate->add_option("--axis", ab.axis, "axis name")->required();
  ablate->add_option("--config", ab.config, "run configuration file")->required();
  ablate->add_option("--out", ab.out, "output table path")->required();
  ablate->add_option("--train", ab.train_data, "training dataset for the sweep")->required();
  ablate->add_option("--test", ab.test_data, "held-out dataset for the sweep")->required();
  ablate->add_option("--records", ab.records, "also write machine-readable metric records");

  dmt::GradcheckArgs gc;
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  grad->add_option("--seed", gc.seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(dmt::ErrorKind::Usage);
  }

  try {
    gd.seed_set = gen->count("--seed") > 0;
    if (gen->parsed()) return dmt::cmd_gen_data(gd);
    if (train->parsed()) return dmt::cmd_train(tr);
    if (track->parsed()) return dmt::cmd_track(tk);
    if (eval->parsed()) return dmt::cmd_eval(ev);
    if (ablate->parsed()) return dmt::cmd_ablate(ab);
    if (grad->parsed()) return dmt::cmd_gradcheck(gc);
  } catch (const dmt::DmtError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
