//! A small synthetic deployment: three farms, four calves each, a few
//! minutes of annotated video with tracked frames, OCR readings for one
//! farm, class-dependent embeddings, calf records and a config file.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use calfplay::dataset::save_embedding;
use calfplay::ethogram::{write_event_log, Dialect, EventRecord, EventType};
use calfplay::timing::{parse_video_stem, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FARMS: [(&str, &str); 3] = [
    ("FarmA", "FarmA_Cam1_20240615_060000"),
    ("FarmB", "FarmB_Cam1_20240615_060000"),
    ("FarmC", "FarmC_Cam2_20240616_070000"),
];
/// FarmB frames carry no timestamps and are resolved through OCR.
pub const OCR_FARM: &str = "FarmB";
pub const CALVES: usize = 4;
pub const DIM: usize = 1024;
pub const FPS: u64 = 25;

pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub seconds: i64,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Active,
    NonActive,
    Idle,
    Management,
    OutOfView,
}

const ACTIVE: [&str; 5] = ["Run", "Gallop", "Buck", "Chase", "Frontal push"];
const NON_ACTIVE: [&str; 4] = ["Brush interaction", "Straw dig", "Straw toss", "Pen feature interaction"];

struct Bout {
    behaviour: &'static str,
    kind: Kind,
    start: i64,
    stop: i64,
}

/// Bouts in tenths of a second. Boundaries fall on half seconds, frames on
/// whole seconds, so every frame sits strictly inside or outside a bout.
fn bouts(rng: &mut ChaCha8Rng, seconds: i64) -> Vec<Bout> {
    let mut out = Vec::new();
    let mut t = 5;
    while t < seconds * 10 - 60 {
        let len = 10 * rng.random_range(3..14) as i64;
        let stop = (t + len).min(seconds * 10 - 5);
        let r: f64 = rng.random();
        let (behaviour, kind) = if r < 0.38 {
            (ACTIVE[rng.random_range(0..ACTIVE.len())], Kind::Active)
        } else if r < 0.72 {
            (NON_ACTIVE[rng.random_range(0..NON_ACTIVE.len())], Kind::NonActive)
        } else if r < 0.95 {
            ("Not Playing", Kind::Idle)
        } else if r < 0.98 {
            ("Management", Kind::Management)
        } else {
            ("Out of view", Kind::OutOfView)
        };
        out.push(Bout { behaviour, kind, start: t, stop });
        t = stop + 10 * rng.random_range(0..3) as i64;
    }
    out
}

fn class_at(bouts: &[Bout], tenths: i64) -> Kind {
    bouts.iter().find(|b| b.start <= tenths && tenths < b.stop).map_or(Kind::Idle, |b| b.kind)
}

fn corrupt(rng: &mut ChaCha8Rng, s: &str) -> String {
    s.chars()
        .map(|c| {
            let sub = match c {
                '0' => 'O',
                '1' => 'I',
                '5' => 'S',
                '8' => 'B',
                other => other,
            };
            if sub != c && rng.random::<f64>() < 0.3 {
                sub
            } else {
                c
            }
        })
        .collect()
}

/// Writes the fixture into `dir` and returns it.
pub fn write(dir: &Path, seed: u64, seconds: i64, max_epochs: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sub in ["events", "frames", "ocr", "embeddings"] {
        std::fs::create_dir_all(dir.join(sub)).unwrap();
    }
    // class directions in embedding space
    let centres: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..DIM).map(|_| rng.sample::<f32, _>(StandardNormal) * 0.08).collect())
        .collect();

    let mut calves = String::from(
        "calf_id,farm_id,age_days,health_category,space_m2,group_size,milk_l_day,bedding_score,body_weight_kg\n",
    );
    let spaces = [3.5, 5.0, 7.0, 9.5];
    for (fi, (farm, video)) in FARMS.iter().enumerate() {
        let start = parse_video_stem(video).unwrap().start_time;
        let mut records = Vec::new();
        let mut frames = String::new();
        let ocr_farm = *farm == OCR_FARM;
        frames.push_str(if ocr_farm {
            "video,frame_index,tracking_id,x,y,w,h,confidence,mean_intensity,occlusion_fraction,crop_path,embedding_path\n"
        } else {
            "video,timestamp,tracking_id,x,y,w,h,confidence,mean_intensity,occlusion_fraction,crop_path,embedding_path\n"
        });
        std::fs::create_dir_all(dir.join("embeddings").join(farm)).unwrap();
        for calf in 1..=CALVES {
            let subject = format!("Calf{calf}");
            let bs = bouts(&mut rng, seconds);
            for b in &bs {
                for (et, t) in [(EventType::StateStart, b.start), (EventType::StateStop, b.stop)] {
                    records.push(EventRecord {
                        subject: subject.clone(),
                        behaviour: b.behaviour.to_string(),
                        modifier: None,
                        event_type: et,
                        time_tenths: t,
                        duration_s: None,
                    });
                }
            }
            let space = spaces[(calf - 1 + fi) % spaces.len()];
            calves.push_str(&format!(
                "{subject},{farm},{},{},{space},{},{:.1},{},{:.1}\n",
                rng.random_range(20..90),
                rng.random_range(1..=3),
                rng.random_range(4..12),
                rng.random_range(4.0..9.0),
                rng.random_range(1..=3),
                rng.random_range(45.0..110.0),
            ));
            // an 8 s tracking dropout on one calf per farm
            let dropout = if calf == 2 { 100..108 } else { 0..0 };
            for s in 0..seconds {
                if dropout.contains(&s) {
                    continue;
                }
                let kind = class_at(&bs, s * 10);
                let r: f64 = rng.random();
                let confidence = if r < 0.04 { 0.3 } else { rng.random_range(0.6..0.99) };
                let r: f64 = rng.random();
                let (w, intensity, occlusion) = if r < 0.02 {
                    (80.0, 120.0, 0.1)
                } else if r < 0.04 {
                    (150.0, 15.0, 0.1)
                } else if r < 0.06 {
                    (150.0, 120.0, 0.8)
                } else {
                    (rng.random_range(120.0..220.0), rng.random_range(60.0..200.0), rng.random_range(0.0..0.3))
                };
                let h = rng.random_range(120.0..220.0);
                let (x, y) = (rng.random_range(0.0..1600.0), rng.random_range(0.0..900.0));
                let name = format!("{subject}_{s:04}");
                let emb = format!("embeddings/{farm}/{name}.bin");
                let crop = format!("crops/{farm}/{name}.jpg");
                let when = if ocr_farm {
                    format!("{}", s as u64 * FPS)
                } else {
                    start.plus_millis(s * 1000).iso_millis()
                };
                frames.push_str(&format!(
                    "{video},{when},{calf},{x:.1},{y:.1},{w:.1},{h:.1},{confidence:.3},{intensity:.1},{occlusion:.3},{crop},{emb}\n"
                ));
                let centre = match kind {
                    Kind::Active => Some(&centres[0]),
                    Kind::NonActive => Some(&centres[1]),
                    Kind::Idle => Some(&centres[2]),
                    Kind::Management | Kind::OutOfView => None,
                };
                let v: Vec<f32> = (0..DIM)
                    .map(|j| centre.map_or(0.0, |c| c[j]) + rng.sample::<f32, _>(StandardNormal))
                    .collect();
                save_embedding(&dir.join(&emb), &v).unwrap();
            }
        }
        let f = std::fs::File::create(dir.join("events").join(format!("{video}.csv"))).unwrap();
        write_event_log(f, &records, Dialect::default()).unwrap();
        std::fs::write(dir.join("frames").join(format!("{farm}.csv")), frames).unwrap();
        if ocr_farm {
            let mut ocr = String::from("frame_index,raw_string\n");
            for s in 0..seconds {
                let text = start.plus_millis(s * 1000).canonical();
                let raw = if s > 0 && s < seconds - 1 && s % 37 == 0 {
                    "--:--".to_string()
                } else if s > 0 && s < seconds - 1 && rng.random::<f64>() < 0.05 {
                    corrupt(&mut rng, &text)
                } else {
                    text
                };
                ocr.push_str(&format!("{},{raw}\n", s as u64 * FPS));
            }
            std::fs::write(dir.join("ocr").join(format!("{video}.csv")), ocr).unwrap();
        }
    }
    std::fs::write(dir.join("calves.csv"), calves).unwrap();
    let config = dir.join("config.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 11\n\n[inputs]\nevents = \"events\"\nframes = \"frames\"\nocr = \"ocr\"\nembeddings = \".\"\ncalves = \"calves.csv\"\n\n\
             [metrics]\nobservation_s = {seconds}\ndeduct = [\"management\", \"out_of_view\"]\n\n\
             [train]\nmax_epochs = {max_epochs}\nbatch_size = 32\n"
        ),
    )
    .unwrap();
    Fixture { dir: dir.to_path_buf(), config, seconds }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_calfplay")
}

/// Runs one command against the fixture config with `out` as output root.
pub fn calfplay(fx: &Fixture, out: &Path, args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .arg("--config")
        .arg(&fx.config)
        .arg("--output")
        .arg(out)
        .args(args)
        .env_remove("CALFPLAY_OUTPUT")
        .output()
        .expect("binary runs")
}

pub const PIPELINE: [&str; 9] = ["ingest", "align", "filter", "metrics", "fit-lmm", "prepare", "train", "evaluate", "report"];

/// Runs the whole pipeline, panicking with stderr on the first failure.
pub fn run_all(fx: &Fixture, out: &Path) {
    for cmd in PIPELINE {
        let o = calfplay(fx, out, &[cmd]);
        assert!(
            o.status.success(),
            "`calfplay {cmd}` failed with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

pub fn timestamp(s: &str) -> Timestamp {
    Timestamp::parse_flexible(s).unwrap()
}
