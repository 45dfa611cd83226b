use std::fmt::{self, Write as _};

use super::NetworkGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub id: usize,
    pub name: String,
    pub kind: &'static str,
    pub output: (usize, usize, usize),
    pub params: usize,
}

/// Per-layer table in execution order.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub arch: &'static str,
    pub rows: Vec<SummaryRow>,
    pub total_params: usize,
    pub conv_layers: usize,
    pub encoder_conv_layers: usize,
}

impl Summary {
    pub fn of(graph: &NetworkGraph) -> Self {
        let rows: Vec<SummaryRow> = graph
            .layers()
            .iter()
            .map(|l| SummaryRow {
                id: l.id,
                name: l.name.clone(),
                kind: l.kind.label(),
                output: l.output,
                params: l
                    .param_ids()
                    .iter()
                    .map(|&p| graph.params().get(p).numel())
                    .sum(),
            })
            .collect();
        Self {
            arch: graph.config.arch.name(),
            total_params: rows.iter().map(|r| r.params).sum(),
            conv_layers: graph.conv_layers().count(),
            encoder_conv_layers: graph.encoder_conv_layers().count(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,name,kind,channels,height,width,params\n");
        for r in &self.rows {
            let (c, h, w) = r.output;
            let _ = writeln!(s, "{},{},{},{c},{h},{w},{}", r.id, r.name, r.kind, r.params);
        }
        let _ = writeln!(s, "total,,,,,,{}", self.total_params);
        s
    }

    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(
            f,
            "{:>4}  {:<name_w$}  {:<8}  {:>18}  {:>12}",
            "id", "name", "kind", "output", "params"
        )?;
        for r in &self.rows {
            let (c, h, w) = r.output;
            writeln!(
                f,
                "{:>4}  {:<name_w$}  {:<8}  {:>18}  {:>12}",
                r.id,
                r.name,
                r.kind,
                format!("{c}x{h}x{w}"),
                r.params
            )?;
        }
        writeln!(f, "architecture: {}", self.arch)?;
        writeln!(
            f,
            "conv layers: {} (encoder {})",
            self.conv_layers, self.encoder_conv_layers
        )?;
        write!(f, "total parameters: {}", self.total_params)
    }
}

#[cfg(test)]
mod tests {
    use crate::model::{build_simple_unet, build_vgg16_unet, ArchConfig};

    #[test]
    fn first_row_and_totals() {
        let g = build_simple_unet(&ArchConfig::simple_unet(64)).unwrap();
        let s = g.summary();
        assert_eq!(s.rows[0].kind, "conv");
        assert_eq!(s.rows[0].output.0, 16);
        assert_eq!(s.total_params, g.param_count());
        assert!(s.to_csv().ends_with(&format!("total,,,,,,{}\n", g.param_count())));
    }

    #[test]
    fn encoder_block5_shape() {
        let g = build_vgg16_unet(&ArchConfig::vgg16_unet(224)).unwrap();
        let s = g.summary();
        let row = s.row("enc5_act3").unwrap();
        assert_eq!(row.output, (512, 224 / 16, 224 / 16));
        let text = s.to_string();
        assert!(text.contains("conv layers: 29 (encoder 13)"));
    }
}
