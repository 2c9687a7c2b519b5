from .frames import Frame, SequenceWindow, sliding_windows, stack_windows
from .synth import DEPTH_PNG_SCALE, SynthSceneSpec, camera_poses, generate_synth, load_synth, save_synth
from .kitti import (
    DataError,
    OdometrySequence,
    load_kitti_odometry,
    load_kitti_raw,
    read_calib_file,
    read_pose_rows,
    stereo_from_projections,
    velodyne_depth,
)
