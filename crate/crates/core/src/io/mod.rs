//! File formats: netpbm images, FGRID tensors, CSV reports and flat
//! key=value configuration.

mod config;
mod csv;
mod fgrid;
mod pnm;

pub use config::{default_seed, parse_config, read_config, SEED_ENV};
pub use csv::{merge_csv, points_csv, write_text};
pub use fgrid::{
    head_params_from_pack, head_params_pack, high_freq_params_from_pack, high_freq_params_pack,
    Fgrid,
};
pub use pnm::{
    decode_pgm, encode_pgm, read_label_pgm, read_mask_pgm, read_pgm, write_label_pgm, write_mask_pgm,
    write_pgm, write_ppm, Gray,
};
