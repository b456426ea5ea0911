"""Small scene builders shared by the tests."""

import dataclasses
import math

import numpy as np

from activepose.dome import rig_from_angles
from activepose.scenesim import Scene, SceneConfig, ScenePerson, generate_scene


def centered_person_scene(seed=0, n_cams=4, length=12):
    """One person whose pelvis sits at the origin at t=0, ringed by level cameras.

    Camera 0 looks at the person's face; the others follow at equal azimuth steps.
    """
    sc = generate_scene(SceneConfig(persons=(1, 1), length=length), seed)
    p = sc.persons[0]
    shift = p.trajectory[0, 2].copy()
    traj = p.trajectory - shift
    face = float(p.facing[0])
    rig = rig_from_angles([face + 2 * math.pi * i / n_cams for i in range(n_cams)], [0.0] * n_cams)
    person = ScenePerson(0, traj, p.facing, p.signature)
    return Scene((person,), sc.length, rig, np.zeros((0, 4)), sc.capsule_radius)


def multi_scene(seed=0, persons=(3, 7), **kw):
    return generate_scene(SceneConfig(persons=persons, **kw), seed)


def replace_rig(scene, rig):
    return dataclasses.replace(scene, rig=rig)
