//! `lumenseg`: train, apply and evaluate vessel-wall segmentation models.
//!
//! Exit codes: 0 success, 1 finished with warnings, 2 configuration error,
//! 3 data error, 4 numeric failure during training.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lumenseg::error::ErrorCategory;

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "lumenseg", version, about = "U-Net segmentation of lumen and media in grayscale vessel scans")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model and write checkpoints, a CSV log and a run manifest
    Train(commands::train::TrainArgs),
    /// Write a binary mask PNG for every scan in a directory
    Predict(commands::predict::PredictArgs),
    /// Compare predicted masks with ground truth (Jaccard and Dice per image)
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Print the layer table and parameter count of a configured model
    Summary(commands::summary::SummaryArgs),
    /// Write before/after panels of random augmentations
    AugmentPreview(commands::preview::PreviewArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lumenseg::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train(a) => commands::train::run(a),
        Cmd::Predict(a) => commands::predict::run(a),
        Cmd::Evaluate(a) => commands::evaluate::run(a),
        Cmd::Summary(a) => commands::summary::run(a),
        Cmd::AugmentPreview(a) => commands::preview::run(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Warning) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_tree_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn categories_map_to_codes() {
        let cfg = anyhow::Error::from(lumenseg::Error::Config("x".into()));
        let data = anyhow::Error::from(lumenseg::Error::EmptyDataset("x".into())).context("loading");
        let num = anyhow::Error::from(lumenseg::Error::NumericAbort { epoch: 1, batch: 1 });
        assert_eq!([exit_code(&cfg), exit_code(&data), exit_code(&num)], [2, 3, 4]);
    }
}
