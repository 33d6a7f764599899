//! Leaderboard tables and chart data files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use duelbench::analytics::DemographicsReport;
use duelbench::domain::ModelRef;
use duelbench::ranking::RankingResult;

fn display_name<'a>(models: &'a [ModelRef], id: &'a str) -> &'a str {
    models
        .iter()
        .find(|m| m.model_id.as_str() == id)
        .map(|m| m.display_name.as_str())
        .unwrap_or(id)
}

/// One row per criterion, one column per model, scores to two decimals.
pub fn score_table_text(models: &[ModelRef], results: &[RankingResult]) -> String {
    let width = models.iter().map(|m| m.display_name.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<12}", "criterion");
    for m in models {
        out += &format!(" {:>width$}", m.display_name);
    }
    out.push('\n');
    for r in results {
        out += &format!("{:<12}", r.criterion.as_str());
        for m in models {
            match r.score_of(&m.model_id) {
                Some(s) => out += &format!(" {s:>width$.2}"),
                None => out += &format!(" {:>width$}", "-"),
            }
        }
        out.push('\n');
    }
    out
}

/// Long-format CSV: criterion, rank, model, score and interval bounds.
pub fn score_table_csv(models: &[ModelRef], results: &[RankingResult]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["criterion", "rank", "model_id", "display_name", "score", "lower", "upper", "votes"])?;
    for r in results {
        for (k, id) in r.ordering.iter().enumerate() {
            let i = r.models.iter().position(|m| m == id).expect("ordering lists fitted models");
            let ci = r.confidence_intervals.as_ref().map(|c| c[i]);
            w.write_record([
                r.criterion.as_str().to_string(),
                (k + 1).to_string(),
                id.to_string(),
                display_name(models, id.as_str()).to_string(),
                format!("{:.2}", r.scores.as_slice()[i]),
                ci.map(|c| format!("{:.2}", c.low)).unwrap_or_default(),
                ci.map(|c| format!("{:.2}", c.high)).unwrap_or_default(),
                r.vote_count.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

/// Bar chart data for one criterion, models in plan order.
pub fn bar_chart_csv(models: &[ModelRef], result: &RankingResult) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "score", "lower", "upper"])?;
    for m in models {
        let Some(i) = result.models.iter().position(|id| *id == m.model_id) else { continue };
        let ci = result.confidence_intervals.as_ref().map(|c| c[i]);
        w.write_record([
            m.display_name.clone(),
            format!("{:.4}", result.scores.as_slice()[i]),
            ci.map(|c| format!("{:.4}", c.low)).unwrap_or_default(),
            ci.map(|c| format!("{:.4}", c.high)).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn shares_csv(shares: &std::collections::BTreeMap<String, f64>) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "share"])?;
    for (k, v) in shares {
        w.write_record([k.clone(), format!("{v:.6}")])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes `rankings.txt`, `rankings.csv`, one `scores_<criterion>.csv` per
/// result and, when given, demographics files into `dir`.
pub fn write_report(
    dir: &Path,
    models: &[ModelRef],
    results: &[RankingResult],
    demographics: Option<&DemographicsReport>,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    put("rankings.txt".into(), score_table_text(models, results))?;
    put("rankings.csv".into(), score_table_csv(models, results).map_err(to_io)?)?;
    for r in results {
        put(format!("scores_{}.csv", r.criterion), bar_chart_csv(models, r).map_err(to_io)?)?;
    }
    if let Some(d) = demographics {
        put("demographics.json".into(), serde_json::to_string_pretty(d)?)?;
        put("continents.csv".into(), shares_csv(&d.continent_shares).map_err(to_io)?)?;
        put("ages.csv".into(), shares_csv(&d.age_shares).map_err(to_io)?)?;
        put("genders.csv".into(), shares_csv(&d.gender_shares).map_err(to_io)?)?;
    }
    Ok(written)
}
