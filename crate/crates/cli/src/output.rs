//! CSV, JSON and gnuplot emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(text: &str) -> std::result::Result<Self, robust_agg::Error> {
        match text {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(robust_agg::Error::Validation(format!(
                "unknown format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Seventeen significant digits, enough to recover every `f64` exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// [`num`] for optional values; absent values become empty cells.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Where results go.
#[derive(Debug, Clone)]
pub struct Sink {
    pub path: Option<PathBuf>,
}

impl Sink {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.path {
            Some(p) => Box::new(
                std::fs::File::create(p)
                    .with_context(|| format!("cannot create {}", p.display()))?,
            ),
            None => Box::new(std::io::stdout().lock()),
        })
    }

    /// Writes a header row followed by `rows`.
    pub fn csv(&self, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.writer()?);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `value` as pretty-printed JSON.
    pub fn json<T: Serialize + ?Sized>(&self, value: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Path of the plot script written next to `csv_path`.
pub fn plot_script_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("gp")
}

/// A gnuplot script drawing the sweep stored in `csv_path`.
pub fn figure1_plot_script(csv_path: &Path) -> String {
    let data = csv_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| csv_path.display().to_string());
    let image = csv_path.with_extension("png");
    let image = image
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!(
        "# Run from the directory holding {data}: gnuplot {script}\n\
         set datafile separator ','\n\
         set datafile missing ''\n\
         set terminal pngcairo size 900,600\n\
         set output '{image}'\n\
         set xlabel 'f'\n\
         set ylabel 'uniform stability'\n\
         set logscale y\n\
         set key top left\n\
         plot '{data}' using 'f':'stab_pois' with linespoints lw 2 title 'poisoning', \\\n\
         \x20    '' using 'f':'stab_byz' with linespoints lw 2 title 'Byzantine (tailored)', \\\n\
         \x20    '' using 'f':'lb_pois' with lines dt 3 title 'poisoning lower bound', \\\n\
         \x20    '' using 'f':'ub_pois' with lines dt 2 title 'poisoning upper bound', \\\n\
         \x20    '' using 'f':'ub_byz_theory' with lines dt 2 title 'Byzantine upper bound', \\\n\
         \x20    '' using 'f':'ub_byz_empirical' with linespoints dt 2 pt 2 title 'Byzantine bound, empirical kappa'\n",
        script = plot_script_path(Path::new(&data)).display(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.7902441886775824, 1e-300, 6.02e23, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(opt(None), "");
    }

    #[test]
    fn plot_script_references_csv() {
        let s = figure1_plot_script(Path::new("/tmp/out/fig.csv"));
        assert!(s.contains("plot 'fig.csv'"));
        assert!(s.contains("set output 'fig.png'"));
    }
}
