//! On-disk corpus layout:
//!
//! ```text
//! <dir>/meta                       key=value summary
//! <dir>/episode_000/graph.toml     the action graph
//! <dir>/episode_000/layouts.txt    one line per frame: x y w h for each object
//! <dir>/episode_000/frames/000.ppm binary RGB frames
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::graph::{parse_graph, serialize_graph};

use super::{Episode, Frame, WorldError};

const FORMAT: &str = "agvid-dataset 1";

/// Contents of the `meta` file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub episodes: usize,
    pub length: usize,
    pub resolution: usize,
    pub objects: Vec<String>,
    pub actions: Vec<String>,
    pub seeds: Vec<u64>,
}

impl DatasetMeta {
    fn of(episodes: &[Episode]) -> Self {
        let first = episodes.first();
        DatasetMeta {
            episodes: episodes.len(),
            length: first.map_or(0, |e| e.length()),
            resolution: first
                .and_then(|e| e.frames.first())
                .map_or(0, |f| f.width()),
            objects: first.map_or(vec![], |e| e.graph.vocab().objects().to_vec()),
            actions: first.map_or(vec![], |e| e.graph.vocab().actions().to_vec()),
            seeds: episodes.iter().map(|e| e.seed).collect(),
        }
    }

    fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "format={FORMAT}\nepisodes={}\nlength={}\nresolution={}\nobjects={}\nactions={}\nseeds={}\n",
            self.episodes,
            self.length,
            self.resolution,
            self.objects.join(","),
            self.actions.join(","),
            seeds.join(",")
        )
    }

    pub fn read(dir: &Path) -> Result<Self, WorldError> {
        let path = dir.join("meta");
        let text = read_text(&path)?;
        let corrupt = |msg: String| WorldError::Corrupt {
            file: path.display().to_string(),
            msg,
        };
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .ok_or_else(|| corrupt(format!("bad line `{l}`")))
            })
            .collect::<Result<_, _>>()?;
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| corrupt(format!("missing key `{k}`")))
        };
        if get("format")? != FORMAT {
            return Err(corrupt(format!("unsupported format `{}`", get("format")?)));
        }
        let num = |k: &str| {
            get(k)?
                .parse::<usize>()
                .map_err(|_| corrupt(format!("`{k}` is not a number")))
        };
        let list = |k: &str| -> Result<Vec<String>, WorldError> {
            Ok(get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect())
        };
        let seeds = list("seeds")?
            .iter()
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| corrupt(format!("bad seed `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let meta = DatasetMeta {
            episodes: num("episodes")?,
            length: num("length")?,
            resolution: num("resolution")?,
            objects: list("objects")?,
            actions: list("actions")?,
            seeds,
        };
        if meta.seeds.len() != meta.episodes {
            return Err(corrupt(format!(
                "{} seeds for {} episodes",
                meta.seeds.len(),
                meta.episodes
            )));
        }
        Ok(meta)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorldError + '_ {
    move |source| WorldError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, WorldError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), WorldError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn episode_dir(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("episode_{index:03}"))
}

fn render_layouts(layouts: &[Vec<BBox>]) -> String {
    let mut out = String::new();
    for frame in layouts {
        let cells: Vec<String> = frame
            .iter()
            .flat_map(|b| b.to_array())
            .map(|v| v.to_string())
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn parse_layouts(
    text: &str,
    file: &Path,
    length: usize,
    n: usize,
) -> Result<Vec<Vec<BBox>>, WorldError> {
    let corrupt = |msg: String| WorldError::Corrupt {
        file: file.display().to_string(),
        msg,
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != length {
        return Err(corrupt(format!(
            "expected {length} frames, found {}",
            lines.len()
        )));
    }
    lines
        .iter()
        .enumerate()
        .map(|(t, line)| {
            let vals = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| corrupt(format!("frame {t}: {e}")))?;
            if vals.len() != 4 * n {
                return Err(corrupt(format!(
                    "frame {t}: expected {} numbers, found {}",
                    4 * n,
                    vals.len()
                )));
            }
            Ok(vals
                .chunks(4)
                .map(|c| BBox::new(c[0], c[1], c[2], c[3]))
                .collect())
        })
        .collect()
}

/// Writes `episodes` under `dir`, creating it if needed. Existing episode
/// files are overwritten.
pub fn export_dataset(episodes: &[Episode], dir: &Path) -> Result<DatasetMeta, WorldError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, ep) in episodes.iter().enumerate() {
        let ed = episode_dir(dir, i);
        let fd = ed.join("frames");
        fs::create_dir_all(&fd).map_err(io_err(&fd))?;
        write(
            &ed.join("graph.toml"),
            serialize_graph(&ep.graph).as_bytes(),
        )?;
        write(
            &ed.join("layouts.txt"),
            render_layouts(&ep.layouts).as_bytes(),
        )?;
        for (t, f) in ep.frames.iter().enumerate() {
            write(&fd.join(format!("{t:03}.ppm")), &f.to_ppm())?;
        }
    }
    let meta = DatasetMeta::of(episodes);
    write(&dir.join("meta"), meta.render().as_bytes())?;
    Ok(meta)
}

/// Reads a corpus written by [`export_dataset`]. Errors name the offending
/// file, which includes the episode directory.
pub fn import_dataset(dir: &Path) -> Result<Vec<Episode>, WorldError> {
    let meta = DatasetMeta::read(dir)?;
    (0..meta.episodes)
        .map(|i| {
            let ed = episode_dir(dir, i);
            let gpath = ed.join("graph.toml");
            let graph = parse_graph(&read_text(&gpath)?).map_err(|e| WorldError::Corrupt {
                file: gpath.display().to_string(),
                msg: e.to_string(),
            })?;
            let lpath = ed.join("layouts.txt");
            let layouts = parse_layouts(
                &read_text(&lpath)?,
                &lpath,
                graph.length(),
                graph.num_objects(),
            )?;
            let frames = (0..graph.length())
                .map(|t| {
                    let p = ed.join("frames").join(format!("{t:03}.ppm"));
                    let bytes = fs::read(&p).map_err(io_err(&p))?;
                    let f = Frame::from_ppm(&bytes).map_err(|msg| WorldError::Corrupt {
                        file: p.display().to_string(),
                        msg,
                    })?;
                    if f.width() != meta.resolution || f.height() != meta.resolution {
                        return Err(WorldError::Corrupt {
                            file: p.display().to_string(),
                            msg: format!(
                                "frame is {}x{}, dataset resolution is {}",
                                f.width(),
                                f.height(),
                                meta.resolution
                            ),
                        });
                    }
                    Ok(f)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Episode {
                graph,
                layouts,
                frames,
                seed: meta.seeds[i],
            })
        })
        .collect()
}
