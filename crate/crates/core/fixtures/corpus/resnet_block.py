from keras.layers import Input, Conv2D, Activation, Add, GlobalAveragePooling2D, Dense
from keras.models import Model
from keras.optimizers import SGD

inp = Input(shape=(64, 64, 3))
x = Conv2D(16, (3, 3), padding='same', activation='relu')(inp)
shortcut = x
y = Conv2D(16, (3, 3), padding='same', activation='relu')(x)
y = Conv2D(16, (3, 3), padding='same')(y)
y = Add()([y, shortcut])
y = Activation('relu')(y)
y = GlobalAveragePooling2D()(y)
out = Dense(5, activation='softmax')(y)

model = Model(inputs=inp, outputs=out)
model.compile(optimizer=SGD(lr=0.1, momentum=0.9), loss='categorical_crossentropy')
