use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    PartSegmentation,
}

/// A backbone level. Empty `radii` means global pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaSpec {
    pub radii: Vec<f64>,
    pub samples: Vec<usize>,
    pub mlps: Vec<Vec<usize>>,
    /// Centers sampled from a cloud of `input_points` points.
    pub out_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcrSpec {
    pub widths: Vec<usize>,
}

/// A re-encoding level. `radius: None` pools globally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreSpec {
    pub widths: Vec<usize>,
    pub radius: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpSpec {
    pub widths: Vec<usize>,
}

/// A hidden fully connected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    pub width: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub task: Task,
    pub n_groups: usize,
    /// Classes for classification, parts for segmentation.
    pub n_outputs: usize,
    /// Residual functions in every stage (identity in backbone and FRE,
    /// reduction in FCR).
    #[serde(default = "yes")]
    pub residual: bool,
    /// Skip the FCR and FRE stages and feed the last backbone level to the head.
    #[serde(default)]
    pub backbone_only: bool,
    /// The cloud size the `out_points` entries refer to.
    pub input_points: usize,
    pub backbone: Vec<SaSpec>,
    pub fcr: Vec<FcrSpec>,
    pub fre: Vec<FreSpec>,
    #[serde(default)]
    pub fp: Vec<FpSpec>,
    pub head: Vec<FcSpec>,
}

fn yes() -> bool {
    true
}

fn msg(radii: [f64; 3], samples: [usize; 3], widths: [usize; 3], out_points: usize) -> SaSpec {
    SaSpec {
        radii: radii.to_vec(),
        samples: samples.to_vec(),
        mlps: widths.iter().map(|&w| vec![w; 3]).collect(),
        out_points,
    }
}

fn ssg(radius: f64, samples: usize, widths: Vec<usize>, out_points: usize) -> SaSpec {
    SaSpec {
        radii: vec![radius],
        samples: vec![samples],
        mlps: vec![widths],
        out_points,
    }
}

fn global(widths: Vec<usize>) -> SaSpec {
    SaSpec {
        radii: vec![],
        samples: vec![],
        mlps: vec![widths],
        out_points: 1,
    }
}

const RADII: [[f64; 3]; 5] = [
    [0.1, 0.2, 0.4],
    [0.2, 0.4, 0.6],
    [0.6, 0.8, 0.9],
    [0.9, 1.2, 1.6],
    [1.2, 1.6, 2.0],
];
const SAMPLES: [[usize; 3]; 5] = [
    [16, 32, 128],
    [32, 64, 128],
    [64, 96, 128],
    [64, 96, 128],
    [64, 96, 128],
];

fn classification_head() -> Vec<FcSpec> {
    vec![
        FcSpec {
            width: 512,
            dropout: 0.4,
        },
        FcSpec {
            width: 256,
            dropout: 0.5,
        },
    ]
}

impl ModelConfig {
    /// The multi-scale classifier: four backbone levels, three FCR and FRE levels.
    pub fn classifier(n_classes: usize, n_groups: usize) -> Self {
        Self::with_levels(4, n_classes, n_groups).expect("4 levels are supported")
    }

    /// The classifier layout with `levels` backbone levels (3 to 6). Level `j`
    /// of the multi-scale backbone is `64·2^j` channels wide over `512/4^j`
    /// points; FCR levels halve the width of the level they land on; FRE
    /// levels sum their inputs. Four levels reproduce [`Self::classifier`].
    pub fn with_levels(levels: usize, n_classes: usize, n_groups: usize) -> Result<Self> {
        if !(3..=6).contains(&levels) {
            return Err(Error::config("model", format!("{levels} levels; supported are 3 to 6")));
        }
        let n_msg = levels - 1;
        let mut backbone = Vec::with_capacity(levels);
        let mut widths = Vec::with_capacity(levels);
        let mut points = Vec::with_capacity(levels);
        for j in 0..n_msg {
            let w = 64 << j;
            let out = (512 >> (2 * j)).max(1);
            backbone.push(msg(RADII[j], SAMPLES[j], [w / 4, w / 4, w / 2], out));
            widths.push(w);
            points.push(out);
        }
        let top = widths[n_msg - 1];
        backbone.push(global(vec![top]));
        widths.push(top);

        // FCR level i lands on backbone level l - 1 - i (0-based).
        let fcr: Vec<FcrSpec> = (0..n_msg)
            .map(|i| {
                let w = widths[n_msg - 1 - i] / 2;
                FcrSpec { widths: vec![w, w] }
            })
            .collect();
        let fcr_out: Vec<usize> = fcr.iter().map(|f| f.widths[1]).collect();

        let mut fre = Vec::with_capacity(n_msg);
        let mut prev = 0;
        for j in 0..n_msg {
            let w = prev + fcr_out[n_msg - 1 - j] + widths[j];
            let (radius, samples) = if j + 1 < n_msg {
                (Some(RADII[j + 1][1]), 32)
            } else {
                (None, 0)
            };
            fre.push(FreSpec {
                widths: vec![w, w],
                radius,
                samples,
            });
            prev = w;
        }
        Ok(ModelConfig {
            name: if levels == 4 {
                "marnet".into()
            } else {
                format!("marnet-l{levels}")
            },
            task: Task::Classification,
            n_groups,
            n_outputs: n_classes,
            residual: true,
            backbone_only: false,
            input_points: 1024,
            backbone,
            fcr,
            fre,
            fp: vec![],
            head: classification_head(),
        })
    }

    /// The part segmenter: the classifier's encoder followed by four feature
    /// propagation levels and a point-wise head.
    pub fn segmenter(n_parts: usize, n_groups: usize) -> Self {
        let mut c = Self::classifier(n_parts, n_groups);
        c.name = "marnet-seg".into();
        c.task = Task::PartSegmentation;
        c.fp = [[256, 256], [256, 128], [128, 128], [128, 128]]
            .iter()
            .map(|w| FpSpec { widths: w.to_vec() })
            .collect();
        c.head = vec![FcSpec {
            width: 128,
            dropout: 0.5,
        }];
        c
    }

    /// The single-scale lite classifier.
    pub fn lite(n_classes: usize, n_groups: usize) -> Self {
        ModelConfig {
            name: "marnet-lite".into(),
            task: Task::Classification,
            n_groups,
            n_outputs: n_classes,
            residual: true,
            backbone_only: false,
            input_points: 1024,
            backbone: vec![
                ssg(0.2, 32, vec![32; 3], 512),
                ssg(0.4, 32, vec![64; 3], 128),
                ssg(0.8, 32, vec![128; 3], 32),
                global(vec![256]),
            ],
            fcr: [128, 64, 32].iter().map(|&w| FcrSpec { widths: vec![w, w] }).collect(),
            fre: vec![
                FreSpec {
                    widths: vec![64, 64],
                    radius: Some(0.4),
                    samples: 32,
                },
                FreSpec {
                    widths: vec![192, 192],
                    radius: Some(0.8),
                    samples: 32,
                },
                FreSpec {
                    widths: vec![448, 448],
                    radius: None,
                    samples: 0,
                },
            ],
            fp: vec![],
            head: classification_head(),
        }
    }

    /// The lite encoder with the segmenter's decoder and head.
    pub fn lite_segmenter(n_parts: usize, n_groups: usize) -> Self {
        let seg = Self::segmenter(n_parts, n_groups);
        ModelConfig {
            name: "marnet-lite-seg".into(),
            task: Task::PartSegmentation,
            fp: seg.fp,
            head: seg.head,
            n_outputs: n_parts,
            ..Self::lite(n_parts, n_groups)
        }
    }

    pub fn without_residual(mut self) -> Self {
        self.residual = false;
        self.name.push_str("-no-residual");
        self
    }

    pub fn backbone_only(mut self) -> Self {
        self.backbone_only = true;
        self.name.push_str("-backbone");
        self
    }

    pub fn levels(&self) -> usize {
        self.backbone.len()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Backbone center counts for clouds of `n` points: each configured count
    /// is scaled by `n / input_points`, rounded, and clamped to
    /// `[1, previous level]`. The last level is always the global point.
    pub fn point_plan(&self, n: usize) -> Vec<usize> {
        let mut prev = n;
        let l = self.backbone.len();
        self.backbone
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let m = if j + 1 == l {
                    1
                } else {
                    let scaled = (s.out_points as f64 * n as f64 / self.input_points as f64).round() as usize;
                    scaled.clamp(1, prev)
                };
                prev = m;
                m
            })
            .collect()
    }
}
